#include "maestro/synth.hpp"

#include <cmath>

#include "maestro/rng.hpp"

namespace maestro {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;

struct ExogChannels {
    std::vector<double> search; // length T + max_lag, index 0 is t = -max_lag
    std::vector<double> temp;
    std::size_t max_lag;
};

ExogChannels build_exog(const SynthSpec& spec) {
    ExogChannels ex;
    ex.max_lag = 0;
    for (const auto& c : spec.couplings) ex.max_lag = std::max(ex.max_lag, c.lag);
    const std::size_t n = spec.T + ex.max_lag;

    Rng rng_search(spec.seed, "synth.search");
    Rng rng_temp(spec.seed, "synth.temp");
    ex.search.resize(n);
    ex.temp.resize(n);
    double ar_state = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) - static_cast<double>(ex.max_lag);
        ar_state = spec.search_ar * ar_state + spec.search_noise_std * rng_search.gaussian();
        ex.search[i] = spec.search_amplitude * std::sin(kTwoPi * t / spec.search_period) +
                       ar_state;
        ex.temp[i] = spec.temp_amplitude * std::sin(kTwoPi * t / spec.temp_period + 0.7) +
                     spec.temp_noise_std * rng_temp.gaussian();
    }
    return ex;
}

std::vector<double> build_target(const SynthSpec& spec, const ExogChannels& ex,
                                 bool with_noise) {
    Rng rng(spec.seed, "synth.target");
    std::vector<double> y(spec.T);
    for (std::size_t t = 0; t < spec.T; ++t) {
        double v = spec.base_level + spec.trend_slope * static_cast<double>(t);
        for (const auto& s : spec.seasonal)
            v += s.amplitude * std::sin(kTwoPi * static_cast<double>(t) / s.period + s.phase);
        for (const auto& c : spec.couplings) {
            const std::vector<double>* src = nullptr;
            if (c.source == "search") src = &ex.search;
            else if (c.source == "temp") src = &ex.temp;
            else throw UsageError("synth: unknown coupling source '" + c.source + "'");
            v += c.strength * (*src)[ex.max_lag + t - c.lag];
        }
        const double noise = spec.noise_std * rng.gaussian();
        if (with_noise) v += noise; // rng advances either way, keeping paths comparable
        y[t] = v;
    }
    return y;
}
} // namespace

TimeSeriesFrame synth_generate(const SynthSpec& spec) {
    double max_period = 1.0;
    for (const auto& s : spec.seasonal) max_period = std::max(max_period, s.period);
    if (static_cast<double>(spec.T) < 2.0 * max_period)
        throw UsageError("synth: T must be at least twice the longest period");

    const ExogChannels ex = build_exog(spec);
    const std::vector<double> y = build_target(spec, ex, true);

    TimeSeriesFrame frame;
    frame.target_column = "ili";
    frame.channel_names = {"ili", "search", "temp"};
    frame.modality_of = {{"ili", Modality::Surveillance},
                         {"search", Modality::Trends},
                         {"temp", Modality::Weather}};
    frame.channels.resize(3);
    for (std::size_t t = 0; t < spec.T; ++t) {
        frame.timestamps.push_back(static_cast<std::int64_t>(t));
        frame.timestamp_text.push_back(std::to_string(t));
        frame.channels[0].push_back(y[t]);
        frame.channels[1].push_back(ex.search[ex.max_lag + t]);
        frame.channels[2].push_back(ex.temp[ex.max_lag + t]);
    }
    frame.validate();
    return frame;
}

double synth_signal_variance(SynthSpec spec) {
    const ExogChannels ex = build_exog(spec);
    const std::vector<double> y = build_target(spec, ex, false);
    double mu = 0.0;
    for (double v : y) mu += v;
    mu /= static_cast<double>(y.size());
    double var = 0.0;
    for (double v : y) var += (v - mu) * (v - mu);
    return var / static_cast<double>(y.size());
}

} // namespace maestro
