#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "maestro/tensor.hpp"

namespace maestro {

enum class Modality { Surveillance, Trends, Weather };

Modality modality_from_string(const std::string& s);
std::string modality_to_string(Modality m);

enum class MissingPolicy { Drop, ForwardFill };

/// Aligned multivariate series. All channels share length T; timestamps
/// are strictly increasing (ISO-8601 dates or integer indices).
struct TimeSeriesFrame {
    std::vector<std::int64_t> timestamps;      // ordinal (days for dates)
    std::vector<std::string> timestamp_text;   // original representation
    std::vector<std::string> channel_names;
    std::vector<std::vector<double>> channels; // channel-major, each length T
    std::map<std::string, Modality> modality_of;
    std::string target_column;

    std::size_t length() const { return timestamps.size(); }
    std::size_t num_channels() const { return channels.size(); }
    std::size_t channel_index(const std::string& name) const;
    const std::vector<double>& channel(const std::string& name) const;
    void validate() const;

    /// Keeps only channels whose modality is in `keep` (target always kept).
    TimeSeriesFrame restrict_modalities(const std::vector<Modality>& keep) const;
};

struct IngestOptions {
    MissingPolicy missing = MissingPolicy::ForwardFill;
};

struct IngestReport {
    std::size_t rows_dropped = 0;
    std::size_t cells_filled = 0;
    std::vector<std::string> warnings;
};

/// CSV contract: UTF-8, header row required, '.' decimal point, first
/// column an ISO-8601 date (YYYY-MM-DD) or integer index. `schema` maps
/// every data column to its modality.
TimeSeriesFrame ingest_csv(const std::string& path,
                           const std::map<std::string, Modality>& schema,
                           const std::string& target_column,
                           const IngestOptions& opts = {},
                           IngestReport* report = nullptr);

struct SplitFrames {
    TimeSeriesFrame train, val, test;
};

/// Contiguous chronological partitions; boundary = floor(fraction * T).
/// min_len guards each partition (pass L+H).
SplitFrames chronological_split(const TimeSeriesFrame& frame,
                                double f_train, double f_val, double f_test,
                                std::size_t min_len);

/// Sliding windows, stride along time. inputs (B,L,D) channel order =
/// frame order (optionally minus the target), targets (B,H) from the
/// target column.
struct WindowBatch {
    Tensor inputs;  // (B, L, D)
    Tensor targets; // (B, H)
    std::vector<std::size_t> window_start_indices;
    std::vector<std::string> input_channel_names;
};

WindowBatch make_windows(const TimeSeriesFrame& frame, std::size_t L, std::size_t H,
                         std::size_t stride = 1, bool include_target_channel = true);

/// Per-channel population statistics with a floored std.
struct NormStats {
    std::vector<double> mean;
    std::vector<double> stddev;
    std::vector<std::string> channel_names;
    std::vector<bool> floored;

    static constexpr double kStdFloor = 1e-5;
};

/// Fit on train inputs only: (B,L,D) over batch and time per channel.
NormStats fit_norm(const Tensor& train_inputs,
                   const std::vector<std::string>& channel_names);
NormStats fit_norm_series(const std::vector<std::vector<double>>& series,
                          const std::vector<std::string>& channel_names);

Tensor apply_norm(const Tensor& x, const NormStats& stats);  // (B,L,D) or (B,D)
Tensor invert_norm(const Tensor& x, const NormStats& stats);

/// Leakage audit: every val/test window must start at or after the end of
/// the preceding partition. Returns true when no window overlaps.
bool audit_no_leakage(std::size_t train_len, std::size_t val_len, std::size_t test_len,
                      std::size_t L, std::size_t H, std::size_t stride);

} // namespace maestro
