#include "maestro/data.hpp"

#include <algorithm>
#include <cmath>
#include <charconv>
#include <fstream>
#include <sstream>

namespace maestro {

Modality modality_from_string(const std::string& s) {
    if (s == "surveillance") return Modality::Surveillance;
    if (s == "trends") return Modality::Trends;
    if (s == "weather") return Modality::Weather;
    throw UsageError("unknown modality '" + s + "' (expected surveillance|trends|weather)");
}

std::string modality_to_string(Modality m) {
    switch (m) {
        case Modality::Surveillance: return "surveillance";
        case Modality::Trends: return "trends";
        case Modality::Weather: return "weather";
    }
    return "?";
}

std::size_t TimeSeriesFrame::channel_index(const std::string& name) const {
    for (std::size_t i = 0; i < channel_names.size(); ++i)
        if (channel_names[i] == name) return i;
    throw DataError("frame: no channel named '" + name + "'");
}

const std::vector<double>& TimeSeriesFrame::channel(const std::string& name) const {
    return channels[channel_index(name)];
}

void TimeSeriesFrame::validate() const {
    const std::size_t T = timestamps.size();
    if (T < 2) throw DataError("frame: needs at least 2 rows, got " + std::to_string(T));
    for (std::size_t i = 1; i < T; ++i) {
        if (timestamps[i] <= timestamps[i - 1])
            throw DataError("frame: non-monotonic timestamp at row " + std::to_string(i) +
                            " ('" + timestamp_text[i] + "')");
    }
    for (std::size_t c = 0; c < channels.size(); ++c) {
        if (channels[c].size() != T)
            throw DataError("frame: channel '" + channel_names[c] + "' length " +
                            std::to_string(channels[c].size()) + " != T=" + std::to_string(T));
    }
    const std::size_t ti = channel_index(target_column);
    auto it = modality_of.find(target_column);
    if (it == modality_of.end() || it->second != Modality::Surveillance)
        throw DataError("frame: target column '" + target_column +
                        "' must carry the surveillance modality");
    (void)ti;
}

TimeSeriesFrame TimeSeriesFrame::restrict_modalities(const std::vector<Modality>& keep) const {
    TimeSeriesFrame out;
    out.timestamps = timestamps;
    out.timestamp_text = timestamp_text;
    out.target_column = target_column;
    for (std::size_t c = 0; c < channel_names.size(); ++c) {
        const auto& name = channel_names[c];
        const Modality m = modality_of.at(name);
        const bool is_target = name == target_column;
        if (is_target || std::find(keep.begin(), keep.end(), m) != keep.end()) {
            out.channel_names.push_back(name);
            out.channels.push_back(channels[c]);
            out.modality_of[name] = m;
        }
    }
    out.validate();
    return out;
}

// --------------------------------------------------------------------------
// CSV ingestion

namespace {

// days_from_civil (Howard Hinnant's algorithm), valid over the proleptic
// Gregorian calendar.
std::int64_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const int era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
                         static_cast<unsigned>(d) - 1u;
    const unsigned doe = yoe * 365u + yoe / 4u - yoe / 100u + doy;
    return static_cast<std::int64_t>(era) * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

bool parse_timestamp(const std::string& s, std::int64_t* out) {
    if (s.size() == 10 && s[4] == '-' && s[7] == '-') {
        int y, m, d;
        if (std::sscanf(s.c_str(), "%d-%d-%d", &y, &m, &d) == 3 && m >= 1 && m <= 12 &&
            d >= 1 && d <= 31) {
            *out = days_from_civil(y, m, d);
            return true;
        }
        return false;
    }
    const char* b = s.data();
    const char* e = b + s.size();
    auto [p, ec] = std::from_chars(b, e, *out);
    return ec == std::errc() && p == e;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

bool is_missing_cell(const std::string& s) {
    if (s.empty()) return true;
    std::string t;
    for (char c : s)
        if (!std::isspace(static_cast<unsigned char>(c))) t.push_back(c);
    if (t.empty()) return true;
    for (auto& c : t) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return t == "nan" || t == "na" || t == "null";
}

} // namespace

TimeSeriesFrame ingest_csv(const std::string& path,
                           const std::map<std::string, Modality>& schema,
                           const std::string& target_column, const IngestOptions& opts,
                           IngestReport* report) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open CSV file: " + path);
    IngestReport local_report;
    IngestReport& rep = report ? *report : local_report;

    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": empty file");
    const auto header = split_csv_line(line);
    if (header.size() < 2) throw DataError(path + ": header needs a time column plus data columns");

    std::vector<std::string> names(header.begin() + 1, header.end());
    for (const auto& [col, mod] : schema) {
        (void)mod;
        if (std::find(names.begin(), names.end(), col) == names.end())
            throw DataError(path + ": missing declared column '" + col + "'");
    }

    TimeSeriesFrame frame;
    frame.channel_names = names;
    frame.channels.assign(names.size(), {});
    frame.target_column = target_column;
    for (const auto& name : names) {
        auto it = schema.find(name);
        if (it == schema.end())
            throw DataError(path + ": column '" + name + "' is not declared in the schema");
        frame.modality_of[name] = it->second;
    }

    std::size_t row = 0;
    std::vector<double> last_seen(names.size(), std::nan(""));
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw DataError(path + ": row " + std::to_string(row) + " has " +
                            std::to_string(cells.size()) + " cells, expected " +
                            std::to_string(header.size()));
        std::int64_t ts;
        if (!parse_timestamp(cells[0], &ts))
            throw DataError(path + ": row " + std::to_string(row) +
                            ": unparseable timestamp '" + cells[0] + "'");

        std::vector<double> vals(names.size());
        bool any_missing = false;
        for (std::size_t c = 0; c < names.size(); ++c) {
            const std::string& cell = cells[c + 1];
            if (is_missing_cell(cell)) {
                any_missing = true;
                vals[c] = std::nan("");
                continue;
            }
            try {
                std::size_t used = 0;
                vals[c] = std::stod(cell, &used);
                if (used != cell.size()) throw std::invalid_argument(cell);
            } catch (const std::exception&) {
                throw DataError(path + ": row " + std::to_string(row) + ", column '" +
                                names[c] + "': non-numeric cell '" + cell + "'");
            }
        }

        if (any_missing) {
            if (opts.missing == MissingPolicy::Drop) {
                ++rep.rows_dropped;
                continue;
            }
            for (std::size_t c = 0; c < names.size(); ++c) {
                if (std::isnan(vals[c])) {
                    if (std::isnan(last_seen[c]))
                        throw DataError(path + ": row " + std::to_string(row) + ", column '" +
                                        names[c] + "': missing value with nothing to forward-fill");
                    vals[c] = last_seen[c];
                    ++rep.cells_filled;
                }
            }
        }

        frame.timestamps.push_back(ts);
        frame.timestamp_text.push_back(cells[0]);
        for (std::size_t c = 0; c < names.size(); ++c) {
            frame.channels[c].push_back(vals[c]);
            last_seen[c] = vals[c];
        }
    }

    frame.validate();
    if (rep.rows_dropped > 0)
        rep.warnings.push_back("dropped " + std::to_string(rep.rows_dropped) +
                               " rows with missing cells");
    if (rep.cells_filled > 0)
        rep.warnings.push_back("forward-filled " + std::to_string(rep.cells_filled) + " cells");
    return frame;
}

// --------------------------------------------------------------------------
// splitting and windowing

namespace {
TimeSeriesFrame take_rows(const TimeSeriesFrame& f, std::size_t begin, std::size_t end) {
    TimeSeriesFrame out;
    out.timestamps.assign(f.timestamps.begin() + begin, f.timestamps.begin() + end);
    out.timestamp_text.assign(f.timestamp_text.begin() + begin, f.timestamp_text.begin() + end);
    out.channel_names = f.channel_names;
    out.modality_of = f.modality_of;
    out.target_column = f.target_column;
    for (const auto& ch : f.channels)
        out.channels.emplace_back(ch.begin() + begin, ch.begin() + end);
    return out;
}
} // namespace

SplitFrames chronological_split(const TimeSeriesFrame& frame, double f_train, double f_val,
                                double f_test, std::size_t min_len) {
    if (f_train <= 0 || f_val <= 0 || f_test <= 0)
        throw UsageError("split fractions must be positive");
    if (std::abs(f_train + f_val + f_test - 1.0) > 1e-9)
        throw UsageError("split fractions must sum to 1");
    const std::size_t T = frame.length();
    const auto b1 = static_cast<std::size_t>(std::floor(f_train * static_cast<double>(T)));
    const auto b2 = static_cast<std::size_t>(std::floor((f_train + f_val) * static_cast<double>(T)));
    const std::size_t lens[3] = {b1, b2 - b1, T - b2};
    const char* names[3] = {"train", "val", "test"};
    for (int i = 0; i < 3; ++i) {
        if (lens[i] < min_len)
            throw DataError(std::string("split: ") + names[i] + " partition has " +
                            std::to_string(lens[i]) + " rows, needs at least " +
                            std::to_string(min_len));
    }
    return SplitFrames{take_rows(frame, 0, b1), take_rows(frame, b1, b2),
                       take_rows(frame, b2, T)};
}

WindowBatch make_windows(const TimeSeriesFrame& frame, std::size_t L, std::size_t H,
                         std::size_t stride, bool include_target_channel) {
    const std::size_t T = frame.length();
    if (stride == 0) throw UsageError("make_windows: stride must be positive");
    if (T < L + H)
        throw DataError("make_windows: series length " + std::to_string(T) +
                        " shorter than L+H=" + std::to_string(L + H));
    const std::size_t count = (T - L - H) / stride + 1;

    std::vector<std::size_t> in_channels;
    WindowBatch batch;
    for (std::size_t c = 0; c < frame.num_channels(); ++c) {
        if (!include_target_channel && frame.channel_names[c] == frame.target_column) continue;
        in_channels.push_back(c);
        batch.input_channel_names.push_back(frame.channel_names[c]);
    }
    if (in_channels.empty()) throw DataError("make_windows: no input channels selected");
    const std::size_t D = in_channels.size();
    const std::size_t ti = frame.channel_index(frame.target_column);

    batch.inputs = Tensor::zeros({count, L, D});
    batch.targets = Tensor::zeros({count, H});
    for (std::size_t w = 0; w < count; ++w) {
        const std::size_t s = w * stride;
        batch.window_start_indices.push_back(s);
        for (std::size_t t = 0; t < L; ++t)
            for (std::size_t d = 0; d < D; ++d)
                batch.inputs.at3(w, t, d) = frame.channels[in_channels[d]][s + t];
        for (std::size_t h = 0; h < H; ++h)
            batch.targets.at2(w, h) = frame.channels[ti][s + L + h];
    }
    return batch;
}

// --------------------------------------------------------------------------
// normalization

NormStats fit_norm_series(const std::vector<std::vector<double>>& series,
                          const std::vector<std::string>& channel_names) {
    NormStats st;
    st.channel_names = channel_names;
    for (const auto& ch : series) {
        if (ch.empty()) throw DataError("fit_norm: empty channel");
        double mu = 0.0;
        for (double v : ch) mu += v;
        mu /= static_cast<double>(ch.size());
        double var = 0.0;
        for (double v : ch) var += (v - mu) * (v - mu);
        var /= static_cast<double>(ch.size()); // population variance
        double sd = std::sqrt(var);
        const bool floored = sd < NormStats::kStdFloor;
        if (floored) sd = NormStats::kStdFloor;
        st.mean.push_back(mu);
        st.stddev.push_back(sd);
        st.floored.push_back(floored);
    }
    return st;
}

NormStats fit_norm(const Tensor& train_inputs, const std::vector<std::string>& channel_names) {
    if (train_inputs.rank() != 3)
        throw DataError("fit_norm: expected (B,L,D) inputs, got " +
                        shape_str(train_inputs.shape));
    const std::size_t B = train_inputs.dim(0), L = train_inputs.dim(1), D = train_inputs.dim(2);
    std::vector<std::vector<double>> per_channel(D);
    for (std::size_t d = 0; d < D; ++d) per_channel[d].reserve(B * L);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < L; ++t)
            for (std::size_t d = 0; d < D; ++d)
                per_channel[d].push_back(train_inputs.at3(b, t, d));
    return fit_norm_series(per_channel, channel_names);
}

namespace {
Tensor norm_transform(const Tensor& x, const NormStats& st, bool invert) {
    const std::size_t D = st.mean.size();
    if (x.rank() < 1 || x.shape.back() != D)
        throw DataError("norm: tensor " + shape_str(x.shape) + " does not end in D=" +
                        std::to_string(D));
    Tensor out = x;
    const std::size_t rows = x.size() / D;
    for (std::size_t r = 0; r < rows; ++r) {
        double* p = out.data.data() + r * D;
        for (std::size_t d = 0; d < D; ++d) {
            p[d] = invert ? p[d] * st.stddev[d] + st.mean[d]
                          : (p[d] - st.mean[d]) / st.stddev[d];
        }
    }
    return out;
}
} // namespace

Tensor apply_norm(const Tensor& x, const NormStats& stats) {
    return norm_transform(x, stats, false);
}

Tensor invert_norm(const Tensor& x, const NormStats& stats) {
    return norm_transform(x, stats, true);
}

bool audit_no_leakage(std::size_t train_len, std::size_t val_len, std::size_t test_len,
                      std::size_t L, std::size_t H, std::size_t stride) {
    auto windows_ok = [&](std::size_t part_begin, std::size_t part_len) {
        if (part_len < L + H) return true; // partition yields no windows
        const std::size_t count = (part_len - L - H) / stride + 1;
        for (std::size_t w = 0; w < count; ++w) {
            const std::size_t s = part_begin + w * stride;
            const std::size_t e = s + L + H; // exclusive global end
            if (s < part_begin || e > part_begin + part_len) return false;
        }
        return true;
    };
    return windows_ok(0, train_len) && windows_ok(train_len, val_len) &&
           windows_ok(train_len + val_len, test_len);
}

} // namespace maestro
