#include "maestro/train.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <sstream>

#include "maestro/rng.hpp"

namespace maestro {

void TrainConfig::validate() const {
    if (lr <= 0.0) throw UsageError("train: lr must be positive");
    if (patience_early < 1 || patience_plateau < 1)
        throw UsageError("train: patience values must be at least 1");
    if (plateau_factor <= 0.0 || plateau_factor >= 1.0)
        throw UsageError("train: plateau_factor must lie in (0,1)");
    if (seeds.empty()) throw UsageError("train: seed list must be non-empty");
    if (batch_size < 1) throw UsageError("train: batch_size must be at least 1");
    if (max_epochs < 1) throw UsageError("train: max_epochs must be at least 1");
    if (stride < 1) throw UsageError("train: stride must be at least 1");
}

std::string format_double(double v) {
    char buf[48];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) return "nan";
    return std::string(buf, p);
}

// ---------------------------------------------------------------------------
// Adam

void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, std::size_t t,
                 double lr, double beta1, double beta2, double eps) {
    if (!param.same_shape(grad))
        throw ad::ShapeError("adam: parameter " + shape_str(param.shape) + " vs gradient " +
                             shape_str(grad.shape));
    if (t < 1) throw UsageError("adam: step count must be at least 1");
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double gi = grad[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

bool adam_step(ParamStore& store, const Binding& binding, AdamState& state,
               const TrainConfig& cfg, double lr) {
    // reject the whole step if any gradient is non-finite
    for (const auto& [name, node] : binding.bound()) {
        if (!node->has_grad) continue;
        if (!node->grad.all_finite()) return false;
    }
    ++state.t;
    for (const auto& name : store.names()) {
        auto it = binding.bound().find(name);
        if (it == binding.bound().end() || !it->second->has_grad) continue;
        Tensor& param = store.at(name);
        auto mi = state.m.find(name);
        if (mi == state.m.end()) {
            state.m.emplace(name, Tensor::zeros(param.shape));
            state.v.emplace(name, Tensor::zeros(param.shape));
        }
        adam_update(param, it->second->grad, state.m.at(name), state.v.at(name), state.t, lr,
                    cfg.beta1, cfg.beta2, cfg.adam_eps);
    }
    return true;
}

// ---------------------------------------------------------------------------
// batching helpers

namespace {

Tensor gather_rows3(const Tensor& all, const std::vector<std::size_t>& idx) {
    const std::size_t L = all.dim(1), D = all.dim(2);
    Tensor out = Tensor::zeros({idx.size(), L, D});
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy_n(all.data.begin() + static_cast<std::ptrdiff_t>(idx[i] * L * D), L * D,
                    out.data.begin() + static_cast<std::ptrdiff_t>(i * L * D));
    return out;
}

Tensor gather_rows2(const Tensor& all, const std::vector<std::size_t>& idx) {
    const std::size_t H = all.dim(1);
    Tensor out = Tensor::zeros({idx.size(), H});
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy_n(all.data.begin() + static_cast<std::ptrdiff_t>(idx[i] * H), H,
                    out.data.begin() + static_cast<std::ptrdiff_t>(i * H));
    return out;
}

struct BatchLoss {
    double total = 0.0, point = 0.0, nll = 0.0, spectral = 0.0, weights = 0.0;
    double stability = 0.0, sigma_mean = 0.0;
};

// Builds the composite objective for one batch. Returns the root node and
// fills the per-term values.
ad::Node* batch_objective(const Model& model, ad::Graph& g, Binding& p, const Tensor& xb,
                          const Tensor& yb, BatchLoss* vals) {
    const ModelConfig& mc = model.config();
    ModelOutput out = model.forward(g, p, xb, true);
    ad::Node* y_norm = g.constant(model.normalize_targets(yb));

    CompositeTerms terms;
    terms.point = point_loss(g, mc.loss, out.mean_norm, y_norm, mc.huber_delta);
    CompositeWeights lam = mc.lambdas;
    if (out.std_norm) {
        terms.nll = nll_loss(g, y_norm, out.mean_norm, out.std_norm);
        terms.sigma_mean = out.sigma_mean;
    } else {
        lam.nll = 0.0;
        lam.sigma_mean = 0.0;
    }
    terms.spectral = out.spectral_reg;
    terms.weights = out.weights_reg;
    terms.stability = out.stability_pen;

    ad::Node* root = composite_objective(g, terms, lam);
    if (vals) {
        vals->total = root->scalar();
        vals->point = terms.point->scalar();
        vals->nll = terms.nll ? terms.nll->scalar() : 0.0;
        vals->spectral = terms.spectral ? terms.spectral->scalar() : 0.0;
        vals->weights = terms.weights ? terms.weights->scalar() : 0.0;
        vals->stability = terms.stability ? terms.stability->scalar() : 0.0;
        vals->sigma_mean = terms.sigma_mean ? terms.sigma_mean->scalar() : 0.0;
    }
    return root;
}

double eval_loss(const Model& model, const WindowBatch& wins, std::size_t batch_size) {
    const std::size_t n = wins.inputs.dim(0);
    double acc = 0.0;
    std::size_t done = 0;
    while (done < n) {
        const std::size_t bs = std::min(batch_size, n - done);
        std::vector<std::size_t> idx(bs);
        for (std::size_t i = 0; i < bs; ++i) idx[i] = done + i;
        ad::Graph g;
        Binding p(g, const_cast<ParamStore&>(model.params()), false);
        BatchLoss vals;
        batch_objective(model, g, p, gather_rows3(wins.inputs, idx),
                        gather_rows2(wins.targets, idx), &vals);
        acc += vals.total * static_cast<double>(bs);
        done += bs;
    }
    return acc / static_cast<double>(n);
}

struct EvalArrays {
    std::vector<double> y, mean, std;
};

EvalArrays eval_predictions(const Model& model, const WindowBatch& wins,
                            std::size_t batch_size) {
    EvalArrays out;
    const std::size_t n = wins.inputs.dim(0), H = wins.targets.dim(1);
    std::size_t done = 0;
    while (done < n) {
        const std::size_t bs = std::min(batch_size, n - done);
        std::vector<std::size_t> idx(bs);
        for (std::size_t i = 0; i < bs; ++i) idx[i] = done + i;
        const Tensor xb = gather_rows3(wins.inputs, idx);
        const Tensor yb = gather_rows2(wins.targets, idx);
        auto preds = model.predict(xb);
        for (std::size_t i = 0; i < bs; ++i)
            for (std::size_t h = 0; h < H; ++h) {
                out.y.push_back(yb.at2(i, h));
                out.mean.push_back(preds[i].mean[h]);
                out.std.push_back(preds[i].std[h]);
            }
        done += bs;
    }
    return out;
}

std::vector<Tensor> snapshot_params(const ParamStore& store) {
    std::vector<Tensor> snap;
    for (const auto& name : store.names()) snap.push_back(store.at(name));
    return snap;
}

void restore_params(ParamStore& store, const std::vector<Tensor>& snap) {
    const auto& names = store.names();
    for (std::size_t i = 0; i < names.size(); ++i) store.at(names[i]) = snap[i];
}

} // namespace

// ---------------------------------------------------------------------------

SeedRunResult train_single(Model& model, const SplitFrames& frames, const TrainConfig& cfg) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const ModelConfig& mc = model.config();
    const bool include_target =
        mc.include_target_in_inputs &&
        std::find(mc.modalities.begin(), mc.modalities.end(), Modality::Surveillance) !=
            mc.modalities.end();

    WindowBatch train_w = make_windows(frames.train, mc.L, mc.H, cfg.stride, include_target);
    WindowBatch val_w = make_windows(frames.val, mc.L, mc.H, cfg.stride, include_target);
    WindowBatch test_w = make_windows(frames.test, mc.L, mc.H, cfg.stride, include_target);
    if (!audit_no_leakage(frames.train.length(), frames.val.length(), frames.test.length(),
                          mc.L, mc.H, cfg.stride))
        throw DataError("train: window leakage audit failed");

    model.fit_stats(frames.train);

    SeedRunResult res;
    res.seed = model.seed();
    res.param_count = model.count_params();

    const std::size_t n_train = train_w.inputs.dim(0);
    const std::size_t batch = std::min(cfg.batch_size, n_train);
    AdamState adam;
    TrainMonitor monitor(cfg.lr, cfg.patience_plateau, cfg.patience_early,
                         cfg.plateau_factor, cfg.min_delta);
    std::vector<Tensor> best_snap = snapshot_params(model.params());

    std::vector<std::size_t> order(n_train);
    for (std::size_t i = 0; i < n_train; ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        Rng shuffle_rng(model.seed(), "shuffle.epoch." + std::to_string(epoch));
        shuffle_rng.shuffle(order);

        EpochLog log;
        log.epoch = epoch;
        log.lr = monitor.lr();
        std::size_t batches = 0;
        for (std::size_t off = 0; off < n_train; off += batch, ++batches) {
            const std::size_t bs = std::min(batch, n_train - off);
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(off),
                                         order.begin() + static_cast<std::ptrdiff_t>(off + bs));
            ad::Graph g;
            Binding p(g, model.params(), true);
            BatchLoss vals;
            ad::Node* root = batch_objective(model, g, p, gather_rows3(train_w.inputs, idx),
                                             gather_rows2(train_w.targets, idx), &vals);
            if (!std::isfinite(vals.total))
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(batches));
            g.backward(root);
            if (!adam_step(model.params(), p, adam, cfg, monitor.lr())) {
                res.events.push_back("epoch " + std::to_string(epoch) + " batch " +
                                     std::to_string(batches) +
                                     ": non-finite gradients, step skipped");
            } else {
                model.project_constraints();
            }
            log.train_total += vals.total;
            log.train_point += vals.point;
            log.train_nll += vals.nll;
            log.train_spectral += vals.spectral;
            log.train_weights += vals.weights;
            log.train_stability += vals.stability;
            log.train_sigma_mean += vals.sigma_mean;
        }
        const double inv_b = 1.0 / static_cast<double>(batches);
        log.train_total *= inv_b;
        log.train_point *= inv_b;
        log.train_nll *= inv_b;
        log.train_spectral *= inv_b;
        log.train_weights *= inv_b;
        log.train_stability *= inv_b;
        log.train_sigma_mean *= inv_b;

        log.val_loss = eval_loss(model, val_w, batch);
        res.curve.push_back(log);
        res.epochs_run = epoch + 1;

        const TrainMonitor::Decision d = monitor.observe(log.val_loss);
        if (d.improved) best_snap = snapshot_params(model.params());
        if (d.stop) {
            res.early_stopped = true;
            break;
        }
    }

    restore_params(model.params(), best_snap);
    res.best_val = monitor.best();
    res.best_epoch = monitor.best_epoch();

    EvalArrays test = eval_predictions(model, test_w, batch);
    res.test = compute_metrics(test.y, test.mean);
    res.test_y = std::move(test.y);
    res.test_mean = std::move(test.mean);
    res.test_std = std::move(test.std);

    res.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

// ---------------------------------------------------------------------------

std::pair<TimeSeriesFrame, std::vector<InputChannel>> select_inputs(
    const TimeSeriesFrame& frame, const ModelConfig& mc) {
    TimeSeriesFrame restricted = frame.restrict_modalities(mc.modalities);
    const bool include_target =
        mc.include_target_in_inputs &&
        std::find(mc.modalities.begin(), mc.modalities.end(), Modality::Surveillance) !=
            mc.modalities.end();
    std::vector<InputChannel> channels;
    for (const auto& name : restricted.channel_names) {
        if (!include_target && name == restricted.target_column) continue;
        channels.push_back({name, restricted.modality_of.at(name)});
    }
    if (channels.empty())
        throw DataError("no input channels remain for the selected modalities");
    return {std::move(restricted), std::move(channels)};
}

Metrics metrics_mean(const std::vector<SeedRunResult>& runs) {
    Metrics m;
    const double n = static_cast<double>(runs.size());
    for (const auto& r : runs) {
        m.mae += r.test.mae;
        m.rmse += r.test.rmse;
        m.mape_pct += r.test.mape_pct;
        m.r2 += r.test.r2;
    }
    m.mae /= n;
    m.rmse /= n;
    m.mape_pct /= n;
    m.r2 /= n;
    return m;
}

Metrics metrics_stddev(const std::vector<SeedRunResult>& runs) {
    const Metrics mu = metrics_mean(runs);
    Metrics s;
    const double n = static_cast<double>(runs.size());
    for (const auto& r : runs) {
        s.mae += (r.test.mae - mu.mae) * (r.test.mae - mu.mae);
        s.rmse += (r.test.rmse - mu.rmse) * (r.test.rmse - mu.rmse);
        s.mape_pct += (r.test.mape_pct - mu.mape_pct) * (r.test.mape_pct - mu.mape_pct);
        s.r2 += (r.test.r2 - mu.r2) * (r.test.r2 - mu.r2);
    }
    s.mae = std::sqrt(s.mae / n);
    s.rmse = std::sqrt(s.rmse / n);
    s.mape_pct = std::sqrt(s.mape_pct / n);
    s.r2 = std::sqrt(s.r2 / n);
    return s;
}

RunReport train_protocol(const ModelConfig& mc,
                         const std::vector<InputChannel>& input_channels,
                         const TimeSeriesFrame& frame, const TrainConfig& cfg) {
    cfg.validate();
    SplitFrames frames =
        chronological_split(frame, cfg.f_train, cfg.f_val, cfg.f_test, mc.L + mc.H);
    RunReport report;
    for (std::uint64_t seed : cfg.seeds) {
        Model model(mc, input_channels, seed);
        report.per_seed.push_back(train_single(model, frames, cfg));
        report.param_count = model.count_params();
    }
    report.mean = metrics_mean(report.per_seed);
    report.stddev = metrics_stddev(report.per_seed);
    return report;
}

std::vector<AblationRow> run_ablation_suite(const ModelConfig& base,
                                            const TimeSeriesFrame& frame,
                                            const TrainConfig& cfg,
                                            const std::vector<std::string>& variants) {
    std::vector<AblationRow> rows;
    for (const auto& name : variants) {
        AblationRow row;
        row.variant = name;
        try {
            const ModelConfig mc = ablation_variant(base, name);
            mc.validate();
            auto [restricted, channels] = select_inputs(frame, mc);
            row.report = train_protocol(mc, channels, restricted, cfg);
        } catch (const std::exception& e) {
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---------------------------------------------------------------------------

ForecastTable forecast_frame(const Model& model, const TimeSeriesFrame& frame,
                             std::size_t batch_size) {
    const ModelConfig& mc = model.config();
    const std::size_t T = frame.length();
    if (T < mc.L + mc.H)
        throw DataError("forecast: frame length " + std::to_string(T) +
                        " shorter than L+H=" + std::to_string(mc.L + mc.H));

    // gather inputs in the model's channel order; this also checks the schema
    std::vector<const std::vector<double>*> cols;
    std::vector<std::string> missing;
    for (const auto& ch : model.input_channels()) {
        try {
            cols.push_back(&frame.channel(ch.name));
        } catch (const DataError&) {
            missing.push_back(ch.name);
        }
    }
    if (!missing.empty()) {
        std::string list;
        for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
        throw DataError("forecast: frame is missing model channels: " + list);
    }
    const std::vector<double>& target = frame.channel(frame.target_column);

    const std::size_t count = T - mc.L - mc.H + 1;
    const std::size_t D = cols.size();
    ForecastTable table;
    std::size_t done = 0;
    while (done < count) {
        const std::size_t bs = std::min(batch_size, count - done);
        Tensor xb = Tensor::zeros({bs, mc.L, D});
        for (std::size_t i = 0; i < bs; ++i) {
            const std::size_t s = done + i;
            for (std::size_t t = 0; t < mc.L; ++t)
                for (std::size_t d = 0; d < D; ++d) xb.at3(i, t, d) = (*cols[d])[s + t];
        }
        auto preds = model.predict(xb);
        for (std::size_t i = 0; i < bs; ++i) {
            const std::size_t s = done + i;
            for (std::size_t h = 0; h < mc.H; ++h) {
                table.timestamp.push_back(frame.timestamp_text[s + mc.L + h]);
                table.y_true.push_back(target[s + mc.L + h]);
                table.y_mean.push_back(preds[i].mean[h]);
                table.y_std.push_back(preds[i].std[h]);
            }
        }
        done += bs;
    }
    return table;
}

std::string forecast_csv(const ForecastTable& t) {
    std::string out = "timestamp,y_true,y_mean,y_std\n";
    for (std::size_t i = 0; i < t.timestamp.size(); ++i) {
        out += t.timestamp[i];
        out += ',';
        out += format_double(t.y_true[i]);
        out += ',';
        out += format_double(t.y_mean[i]);
        out += ',';
        out += format_double(t.y_std[i]);
        out += '\n';
    }
    return out;
}

std::string curve_csv(const std::vector<EpochLog>& curve) {
    std::string out =
        "epoch,train_total,train_point,train_nll,train_spectral,train_weights,"
        "train_stability,train_sigma_mean,val_loss,lr\n";
    for (const auto& e : curve) {
        out += std::to_string(e.epoch);
        for (double v : {e.train_total, e.train_point, e.train_nll, e.train_spectral,
                         e.train_weights, e.train_stability, e.train_sigma_mean, e.val_loss,
                         e.lr}) {
            out += ',';
            out += format_double(v);
        }
        out += '\n';
    }
    return out;
}

std::string curve_svg(const std::vector<EpochLog>& curve) {
    const double W = 640, Hh = 360, pad = 40;
    double lo = 1e300, hi = -1e300;
    for (const auto& e : curve) {
        lo = std::min({lo, e.train_total, e.val_loss});
        hi = std::max({hi, e.train_total, e.val_loss});
    }
    if (curve.empty() || !(hi > lo)) {
        lo = 0;
        hi = 1;
    }
    const double n = std::max<std::size_t>(curve.size() - 1, 1);
    auto xpos = [&](std::size_t i) { return pad + (W - 2 * pad) * static_cast<double>(i) / n; };
    auto ypos = [&](double v) { return Hh - pad - (Hh - 2 * pad) * (v - lo) / (hi - lo); };
    auto poly = [&](auto getter, const char* color) {
        std::string s = "<polyline fill=\"none\" stroke=\"" + std::string(color) +
                        "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < curve.size(); ++i)
            s += format_double(xpos(i)) + "," + format_double(ypos(getter(curve[i]))) + " ";
        s += "\"/>\n";
        return s;
    };
    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"360\" "
                      "viewBox=\"0 0 640 360\">\n";
    svg += "<rect width=\"640\" height=\"360\" fill=\"white\"/>\n";
    svg += "<line x1=\"40\" y1=\"320\" x2=\"600\" y2=\"320\" stroke=\"black\"/>\n";
    svg += "<line x1=\"40\" y1=\"40\" x2=\"40\" y2=\"320\" stroke=\"black\"/>\n";
    svg += poly([](const EpochLog& e) { return e.train_total; }, "steelblue");
    svg += poly([](const EpochLog& e) { return e.val_loss; }, "firebrick");
    svg += "<text x=\"460\" y=\"30\" font-size=\"12\" fill=\"steelblue\">train</text>\n";
    svg += "<text x=\"520\" y=\"30\" font-size=\"12\" fill=\"firebrick\">val</text>\n";
    svg += "<text x=\"8\" y=\"44\" font-size=\"10\">" + format_double(hi) + "</text>\n";
    svg += "<text x=\"8\" y=\"320\" font-size=\"10\">" + format_double(lo) + "</text>\n";
    svg += "</svg>\n";
    return svg;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out = "variant,seed,mae,rmse,mape_pct,r2,params\n";
    for (const auto& row : rows) {
        if (!row.error.empty()) continue;
        for (const auto& run : row.report.per_seed) {
            out += '"' + row.variant + '"';
            out += ',' + std::to_string(run.seed);
            out += ',' + format_double(run.test.mae);
            out += ',' + format_double(run.test.rmse);
            out += ',' + format_double(run.test.mape_pct);
            out += ',' + format_double(run.test.r2);
            out += ',' + std::to_string(run.param_count);
            out += '\n';
        }
    }
    return out;
}

namespace {
std::string fixed3(double v) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(3);
    os << v;
    return os.str();
}
} // namespace

std::string ablation_table(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "variant                          MAE      RMSE     R2       params\n";
    for (const auto& row : rows) {
        os << row.variant;
        for (std::size_t i = row.variant.size(); i < 32; ++i) os << ' ';
        if (!row.error.empty()) {
            os << " FAILED: " << row.error << "\n";
            continue;
        }
        const Metrics& m = row.report.mean;
        os << " " << fixed3(m.mae) << "    " << fixed3(m.rmse) << "    " << fixed3(m.r2)
           << "    " << row.report.param_count << "\n";
    }
    return os.str();
}

std::string report_text(const RunReport& report) {
    std::ostringstream os;
    os << "seeds: ";
    for (const auto& r : report.per_seed) os << r.seed << " ";
    os << "\nparams: " << report.param_count << "\n";
    os << "seed   mae      rmse     mape%     r2       epochs  best_val\n";
    for (const auto& r : report.per_seed) {
        os << r.seed << "      " << fixed3(r.test.mae) << "    " << fixed3(r.test.rmse)
           << "    " << fixed3(r.test.mape_pct) << "    " << fixed3(r.test.r2) << "    "
           << r.epochs_run << "      " << format_double(r.best_val) << "\n";
    }
    os << "mean   " << fixed3(report.mean.mae) << "    " << fixed3(report.mean.rmse) << "    "
       << fixed3(report.mean.mape_pct) << "    " << fixed3(report.mean.r2) << "\n";
    os << "std    " << fixed3(report.stddev.mae) << "    " << fixed3(report.stddev.rmse)
       << "    " << fixed3(report.stddev.mape_pct) << "    " << fixed3(report.stddev.r2)
       << "\n";
    return os.str();
}

} // namespace maestro
