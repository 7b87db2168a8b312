#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "maestro/data.hpp"

namespace maestro {

struct SeasonalTerm {
    double period;
    double amplitude = 1.0;
    double phase = 0.0;
};

/// target[t] += strength * source[t - lag]; the source channel leads.
struct Coupling {
    std::string source;
    std::size_t lag = 0;
    double strength = 1.0;
};

struct SynthSpec {
    std::size_t T = 500;
    std::uint64_t seed = 0;

    double base_level = 10.0;
    double trend_slope = 0.0;
    std::vector<SeasonalTerm> seasonal; // target's own seasonality
    double noise_std = 0.1;             // Gaussian observation noise on target

    // exogenous "search" channel (trends modality): smooth AR(1) signal
    // plus its own seasonality
    double search_period = 26.0;
    double search_amplitude = 1.0;
    double search_ar = 0.8;
    double search_noise_std = 0.3;

    // exogenous "temp" channel (weather modality)
    double temp_period = 52.0;
    double temp_amplitude = 1.0;
    double temp_noise_std = 0.1;

    std::vector<Coupling> couplings;
};

/// Deterministic multi-modal synthetic frame; same spec (including seed)
/// yields a bit-identical frame. target = trend + seasonal sum + coupled
/// lags of exogenous channels + noise.
TimeSeriesFrame synth_generate(const SynthSpec& spec);

/// Variance of the noiseless target over the spec's horizon; used to pick
/// noise_std for a desired signal-to-noise ratio.
double synth_signal_variance(SynthSpec spec);

} // namespace maestro
