#pragma once

#include <string>
#include <vector>

#include "maestro/params.hpp"

namespace maestro {

/// Linear map along the time axis only: (B,L,d) -> (B,H,d).
class TemporalProjection {
public:
    TemporalProjection(ParamStore& store, std::string prefix, std::size_t L, std::size_t H);

    ad::Node* forward(ad::Graph& g, Binding& p, ad::Node* h) const;

private:
    std::string prefix_;
    std::size_t L_, H_;
};

/// Gaussian head: mean = affine(h), std = softplus(affine(h)) + eps_sigma.
class UncertaintyHead {
public:
    UncertaintyHead(ParamStore& store, std::string prefix, std::size_t d,
                    double eps_sigma = 1e-4);

    struct Output {
        ad::Node* mean; // (B,H)
        ad::Node* std;  // (B,H), strictly positive
    };
    Output forward(ad::Graph& g, Binding& p, ad::Node* h) const; // h (B,H,d)

    double eps_sigma() const { return eps_sigma_; }

private:
    std::string prefix_;
    std::size_t d_;
    double eps_sigma_;
};

/// Plain point head used when uncertainty estimation is off.
class OutputProjection {
public:
    OutputProjection(ParamStore& store, std::string prefix, std::size_t d);
    ad::Node* forward(ad::Graph& g, Binding& p, ad::Node* h) const; // (B,H,d)->(B,H)

private:
    std::string prefix_;
    std::size_t d_;
};

enum class PointLoss { Mse, Huber };

PointLoss point_loss_from_string(const std::string& s);
std::string point_loss_to_string(PointLoss k);

/// Mean over elements; Huber is quadratic within huber_delta, linear beyond.
ad::Node* point_loss(ad::Graph& g, PointLoss kind, ad::Node* pred, ad::Node* target,
                     double huber_delta = 1.0);

/// Mean per-step Gaussian negative log-likelihood,
/// 0.5 log(2 pi sigma^2) + (y - mu)^2 / (2 sigma^2).
ad::Node* nll_loss(ad::Graph& g, ad::Node* target, ad::Node* mean, ad::Node* std);

struct CompositeWeights {
    double point = 1.0;      // lambda_1
    double nll = 0.1;        // lambda_2 (forced to 0 when uncertainty is off)
    double spectral = 1.0;   // lambda_3
    double weights = 1.0;    // lambda_4
    double stability = 1.0;  // lambda_5
    double sigma_mean = 0.0; // the sigma-magnitude term carries its own weight
};

struct CompositeTerms {
    ad::Node* point = nullptr;
    ad::Node* nll = nullptr;
    ad::Node* spectral = nullptr;
    ad::Node* weights = nullptr;
    ad::Node* stability = nullptr;
    ad::Node* sigma_mean = nullptr;
};

/// Weighted sum of the available terms; null terms contribute nothing.
/// Negative weights are rejected.
ad::Node* composite_objective(ad::Graph& g, const CompositeTerms& terms,
                              const CompositeWeights& w);

struct Metrics {
    double mae = 0.0;
    double rmse = 0.0;
    double mape_pct = 0.0;
    double r2 = 0.0;
    std::size_t mape_excluded = 0; // exactly-zero targets skipped by MAPE
};

/// Standard definitions; MAPE skips exactly-zero targets and reports how
/// many were skipped. Needs at least 2 points for R^2.
Metrics compute_metrics(const std::vector<double>& y, const std::vector<double>& yhat);

struct CalibrationResult {
    double ks_stat = 0.0;
    double critical = 0.0;
    bool pass = false;
    std::size_t n = 0;
};

/// One-sample Kolmogorov-Smirnov test of standardized residuals (y-mu)/sigma
/// against the standard normal, using the asymptotic critical value
/// c(alpha)/sqrt(n) with c(alpha) = sqrt(-0.5 ln(alpha/2)). Requires n >= 30.
CalibrationResult calibration_check(const std::vector<double>& y,
                                    const std::vector<double>& mu,
                                    const std::vector<double>& sigma, double alpha = 0.01);

double normal_cdf(double x);

} // namespace maestro
