#include "gdds/losses.hpp"

#include <algorithm>
#include <cmath>

namespace gdds {
namespace {

struct Clamped {
    double value;
    bool active;  // gradient is blocked
};

Clamped clamp_prob(double p, double delta) {
    if (p < delta) return {delta, true};
    if (p > 1.0 - delta) return {1.0 - delta, true};
    return {p, false};
}

void require_same_size(size_t a, size_t b, const char* what) {
    if (a != b) {
        throw Error(std::string(what) + ": shape mismatch (" + std::to_string(a) + " vs " +
                    std::to_string(b) + " elements)");
    }
}

// (1 - u)^e, with 0^0 == 1
double pow_complement(double u, double e) { return e == 0.0 ? 1.0 : std::pow(1.0 - u, e); }

}  // namespace

void LossWeights::validate() const {
    if (alpha < 0 || beta < 0) throw Error("loss weights alpha/beta must be non-negative");
    if (gamma < 0) throw Error("focal exponent gamma must be non-negative");
    if (!(epsilon > 0)) throw Error("Dice epsilon must be positive");
    if (!(clamp_delta > 0 && clamp_delta < 0.5)) throw Error("clamp_delta must lie in (0, 0.5)");
    if (focal_alpha && (*focal_alpha < 0 || *focal_alpha > 1)) {
        throw Error("focal alpha must lie in [0, 1]");
    }
}

double focal_loss(std::span<const double> pred, std::span<const double> target,
                  const FocalOptions& opts, std::span<double> grad) {
    require_same_size(pred.size(), target.size(), "focal_loss");
    if (!grad.empty()) require_same_size(grad.size(), pred.size(), "focal_loss gradient");
    if (pred.empty()) return 0.0;
    const double g = opts.gamma;
    const double inv_n = 1.0 / static_cast<double>(pred.size());
    double sum = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const bool positive = target[i] > 0.5;
        const auto [p, blocked] = clamp_prob(pred[i], opts.clamp_delta);
        const double pt = positive ? p : 1.0 - p;
        const double at = opts.alpha ? (positive ? *opts.alpha : 1.0 - *opts.alpha) : 1.0;
        const double logpt = std::log(pt);
        const double mod = pow_complement(pt, g);
        sum += at * mod * -logpt;
        if (!grad.empty()) {
            double d_pt = -mod / pt;
            if (g != 0.0) d_pt += g * pow_complement(pt, g - 1.0) * logpt;
            d_pt *= at;
            grad[i] = blocked ? 0.0 : (positive ? d_pt : -d_pt) * inv_n;
        }
    }
    return sum * inv_n;
}

double dice_focal_loss(std::span<const double> pred, std::span<const double> target,
                       double epsilon, double clamp_delta, std::span<double> grad,
                       double exponent) {
    require_same_size(pred.size(), target.size(), "dice_focal_loss");
    if (!grad.empty()) require_same_size(grad.size(), pred.size(), "dice_focal_loss gradient");
    if (pred.empty()) return 0.0;
    const double inv_n = 1.0 / static_cast<double>(pred.size());
    double inter = 0.0, denom = epsilon, focal = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double p = clamp_prob(pred[i], clamp_delta).value;
        const double y = target[i] > 0.5 ? 1.0 : 0.0;
        inter += p * y;
        denom += p + y;
        const double pp = y > 0 ? p : 1.0 - p;
        focal += pow_complement(pp, exponent) * std::log(pp);
    }
    const double dice = 2.0 * inter / denom;
    focal *= inv_n;
    if (!grad.empty()) {
        for (size_t i = 0; i < pred.size(); ++i) {
            const auto [p, blocked] = clamp_prob(pred[i], clamp_delta);
            if (blocked) {
                grad[i] = 0.0;
                continue;
            }
            const bool positive = target[i] > 0.5;
            const double y = positive ? 1.0 : 0.0;
            const double d_dice = 2.0 * y / denom - 2.0 * inter / (denom * denom);
            const double pp = positive ? p : 1.0 - p;
            double d_g = pow_complement(pp, exponent) / pp;
            if (exponent != 0.0) d_g -= exponent * pow_complement(pp, exponent - 1.0) * std::log(pp);
            const double d_focal = (positive ? d_g : -d_g) * inv_n;
            grad[i] = -d_dice - d_focal;
        }
    }
    return -(dice + focal);
}

double dds_loss(const DenseTensor& phat_n, const LabelVolume& y, int n, const FocalOptions& opts,
                std::span<double> grad) {
    if (phat_n.n != n || phat_n.channels != static_cast<int64_t>(n) * n * n) {
        throw Error("dds_loss: dense head output does not carry n^3 channels for n=" +
                    std::to_string(n));
    }
    const auto& s = y.shape();
    if (!(Shape3{s.d / n, s.h / n, s.w / n} == phat_n.spatial) || s.d % n || s.h % n || s.w % n) {
        throw Error("dds_loss: dense head spatial shape " + to_string(phat_n.spatial) +
                    " does not match label " + to_string(s) + " / " + std::to_string(n));
    }
    const auto yn = dtt_label<double>(y, n);
    return focal_loss(phat_n.data, yn.data, opts, grad);
}

double consistency_loss(const DenseTensor& phat_n, const ProbGrid& p, const LabelVolume& y, int n,
                        const FocalOptions& opts, std::span<double> grad_phat,
                        std::span<double> grad_p, bool stop_grad_p) {
    if (!(p.shape() == y.shape())) throw Error("consistency_loss: p and y shapes differ");
    if (phat_n.n != n || phat_n.channels != static_cast<int64_t>(n) * n * n) {
        throw Error("consistency_loss: dense head output inconsistent with n=" + std::to_string(n));
    }
    const auto pn = dtt_forward(p, n);
    if (!(pn.spatial == phat_n.spatial)) {
        throw Error("consistency_loss: dense head spatial shape " + to_string(phat_n.spatial) +
                    " does not match DTT(p) " + to_string(pn.spatial));
    }
    const auto yn = dtt_label<double>(y, n);
    const size_t m = yn.data.size();
    if (!grad_phat.empty()) require_same_size(grad_phat.size(), m, "consistency gradient (phat)");
    if (!grad_p.empty()) require_same_size(grad_p.size(), m, "consistency gradient (p)");

    std::vector<double> q(m), da(m), db(m);
    std::vector<bool> a_blocked(m), b_blocked(m);
    for (size_t i = 0; i < m; ++i) {
        const auto a = clamp_prob(phat_n.data[i], opts.clamp_delta);
        const auto b = clamp_prob(pn.data[i], opts.clamp_delta);
        a_blocked[i] = a.active;
        b_blocked[i] = b.active;
        if (yn.data[i] > 0.5) {
            q[i] = a.value * b.value;
            da[i] = b.value;
            db[i] = a.value;
        } else {
            q[i] = 0.5 * (a.value + b.value);
            da[i] = 0.5;
            db[i] = 0.5;
        }
    }
    const bool want_grad = !grad_phat.empty() || !grad_p.empty();
    std::vector<double> dq(want_grad ? m : 0);
    const double loss = focal_loss(q, yn.data, opts, dq);
    if (!grad_phat.empty()) {
        for (size_t i = 0; i < m; ++i) grad_phat[i] = a_blocked[i] ? 0.0 : dq[i] * da[i];
    }
    if (!grad_p.empty()) {
        if (stop_grad_p) {
            std::fill(grad_p.begin(), grad_p.end(), 0.0);
        } else {
            DenseTensor gq = pn;
            for (size_t i = 0; i < m; ++i) gq.data[i] = b_blocked[i] ? 0.0 : dq[i] * db[i];
            const auto back = dtt_inverse(gq, n);
            std::copy(back.data().begin(), back.data().end(), grad_p.begin());
        }
    }
    return loss;
}

double weighted_total(const LossBreakdown& parts, const LossWeights& w) {
    return parts.l_zeta_en + parts.l_zeta_de + w.alpha * parts.l_phi + w.beta * parts.l_xi;
}

LossBreakdown total_loss(const ProbGrid* en_p, const ProbGrid& de_p, const DenseTensor* phat_n,
                         const LabelVolume& y, const LossWeights& w, LossGradients* grads) {
    w.validate();
    if (!(de_p.shape() == y.shape()) || (en_p && !(en_p->shape() == y.shape()))) {
        throw Error("total_loss: prediction and label shapes differ");
    }
    std::vector<double> target(y.data().begin(), y.data().end());
    const auto fo = focal_options(w);
    LossBreakdown out;
    const size_t nvox = static_cast<size_t>(y.size());

    if (grads) {
        grads->en_p.assign(en_p ? nvox : 0, 0.0);
        grads->de_p.assign(nvox, 0.0);
        grads->phat_n.assign(phat_n ? phat_n->data.size() : 0, 0.0);
    }
    if (en_p) {
        out.l_zeta_en = dice_focal_loss(en_p->data(), target, w.epsilon, w.clamp_delta,
                                        grads ? std::span<double>(grads->en_p) : std::span<double>{});
    }
    out.l_zeta_de = dice_focal_loss(de_p.data(), target, w.epsilon, w.clamp_delta,
                                    grads ? std::span<double>(grads->de_p) : std::span<double>{});
    if (phat_n) {
        const int n = phat_n->n;
        std::vector<double> g_phi, g_xi_phat, g_xi_p;
        if (grads) {
            g_phi.assign(phat_n->data.size(), 0.0);
            g_xi_phat.assign(phat_n->data.size(), 0.0);
            g_xi_p.assign(nvox, 0.0);
        }
        out.l_phi = dds_loss(*phat_n, y, n, fo, g_phi);
        out.l_xi = consistency_loss(*phat_n, de_p, y, n, fo, g_xi_phat, g_xi_p,
                                    w.consistency_stop_grad_p);
        if (grads) {
            for (size_t i = 0; i < g_phi.size(); ++i) {
                grads->phat_n[i] = w.alpha * g_phi[i] + w.beta * g_xi_phat[i];
            }
            for (size_t i = 0; i < nvox; ++i) grads->de_p[i] += w.beta * g_xi_p[i];
        }
    }
    out.total = weighted_total(out, w);
    return out;
}

}  // namespace gdds
