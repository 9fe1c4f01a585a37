#pragma once

#include <optional>
#include <span>
#include <vector>

#include "gdds/dtt.hpp"
#include "gdds/volume.hpp"

namespace gdds {

/// Probability volume in double precision, the currency of every loss.
using ProbGrid = Grid3<double>;
using DenseTensor = DenseTopologyTensor<double>;

struct LossWeights {
    double alpha = 0.8;        // weight of the deep dense supervision term
    double beta = 0.8;         // weight of the consistency term
    double gamma = 2.0;        // focal exponent
    double epsilon = 1e-5;     // Dice smoothing
    double clamp_delta = 1e-7; // probabilities live in [delta, 1 - delta]
    /// Class-balancing factor of the original focal loss; unset disables it.
    std::optional<double> focal_alpha;
    /// Stop the consistency gradient from reaching the segmentation output.
    bool consistency_stop_grad_p = false;

    void validate() const;
};

struct LossBreakdown {
    double total = 0.0;
    double l_zeta_en = 0.0;
    double l_zeta_de = 0.0;
    double l_phi = 0.0;
    double l_xi = 0.0;
    double l_ds = 0.0;  // plain deep supervision, only used by the DS ablation
};

struct FocalOptions {
    double gamma = 2.0;
    double clamp_delta = 1e-7;
    std::optional<double> alpha;
};

/// Mean over elements of alpha_t * (1 - p_t)^gamma * (-log p_t), with p_t = pred
/// where the target is 1 and 1 - pred elsewhere. `grad`, when non-empty,
/// receives dL/dpred (zero where the clamp is active).
double focal_loss(std::span<const double> pred, std::span<const double> target,
                  const FocalOptions& opts = {}, std::span<double> grad = {});

/// DiceFocal: -(2*sum(p*y) / (sum(p + y) + eps) + mean((1 - p')^k * log p')).
double dice_focal_loss(std::span<const double> pred, std::span<const double> target,
                       double epsilon = 1e-5, double clamp_delta = 1e-7,
                       std::span<double> grad = {}, double exponent = 2.0);

/// Deep dense supervision: focal loss between the dense head output and DTT(y, n).
double dds_loss(const DenseTensor& phat_n, const LabelVolume& y, int n,
                const FocalOptions& opts = {}, std::span<double> grad = {});

/// Foreground-emphasized consistency. With a = phat_n and b = DTT(p, n):
///   q = y_n * a * b + (1 - y_n) * (a + b) / 2,   loss = focal(q, y_n).
/// `grad_phat` and `grad_p` are optional outputs (sized like phat_n and p).
double consistency_loss(const DenseTensor& phat_n, const ProbGrid& p, const LabelVolume& y, int n,
                        const FocalOptions& opts = {}, std::span<double> grad_phat = {},
                        std::span<double> grad_p = {}, bool stop_grad_p = false);

/// Gradients of the total objective w.r.t. each head's probabilities.
struct LossGradients {
    std::vector<double> en_p;
    std::vector<double> de_p;
    std::vector<double> phat_n;
};

/// l_zeta_en + l_zeta_de + alpha * l_phi + beta * l_xi.
double weighted_total(const LossBreakdown& parts, const LossWeights& w);

/// Total objective  L = L_en + L_de + alpha * L_phi + beta * L_xi.
/// `en_p` may be null when the model has no encoder group-supervision head,
/// `phat_n` may be null when it has no deep dense head.
LossBreakdown total_loss(const ProbGrid* en_p, const ProbGrid& de_p, const DenseTensor* phat_n,
                         const LabelVolume& y, const LossWeights& w, LossGradients* grads = nullptr);

inline FocalOptions focal_options(const LossWeights& w) {
    return FocalOptions{w.gamma, w.clamp_delta, w.focal_alpha};
}

}  // namespace gdds
