#include "tempofuse/losses.hpp"

#include <cmath>

namespace tempofuse {

void LossConfig::validate() const {
    if (!(tau_fusion < tau_reset)) throw InvalidConfig("loss: tau_fusion must be < tau_reset");
    if (alpha_reg < 0 || alpha_disp < 0 || alpha_fusion < 0 || alpha_reset < 0)
        throw InvalidConfig("loss: alpha weights must be >= 0");
    if (!(huber_delta > 0)) throw InvalidConfig("loss: huber_delta must be > 0");
}

double huber(double pred, double gt, double delta) {
    const double e = std::abs(pred - gt);
    return e <= delta ? 0.5 * e * e : delta * (e - 0.5 * delta);
}

double huber_grad(double pred, double gt, double delta) {
    const double e = pred - gt;
    if (std::abs(e) <= delta) return e;
    return e > 0 ? delta : -delta;
}

double reset_loss(double w_reset, double e_motion, double e_stereo, double tau_reset) {
    if (e_motion > e_stereo + tau_reset) return w_reset;
    if (e_motion < e_stereo - tau_reset) return 1.0 - w_reset;
    return 0.0;
}

double reset_loss_grad(double, double e_motion, double e_stereo, double tau_reset) {
    if (e_motion > e_stereo + tau_reset) return 1.0;
    if (e_motion < e_stereo - tau_reset) return -1.0;
    return 0.0;
}

double fusion_loss(double w_fusion, double e_motion, double e_stereo, double tau_fusion,
                   double alpha_reg) {
    if (e_motion > e_stereo + tau_fusion) return w_fusion;
    if (e_motion < e_stereo - tau_fusion) return 1.0 - w_fusion;
    return alpha_reg * std::abs(w_fusion - 0.5);
}

double fusion_loss_grad(double w_fusion, double e_motion, double e_stereo, double tau_fusion,
                        double alpha_reg) {
    if (e_motion > e_stereo + tau_fusion) return 1.0;
    if (e_motion < e_stereo - tau_fusion) return -1.0;
    if (w_fusion == 0.5) return 0.0;
    return w_fusion > 0.5 ? alpha_reg : -alpha_reg;
}

PixelLoss pixel_loss(double d_fused, double d_gt, double w_reset, double w_fusion, double e_motion,
                     double e_stereo, const LossConfig& cfg) {
    PixelLoss out;
    out.total = cfg.alpha_disp * huber(d_fused, d_gt, cfg.huber_delta) +
                cfg.alpha_fusion * fusion_loss(w_fusion, e_motion, e_stereo, cfg.tau_fusion, cfg.alpha_reg) +
                cfg.alpha_reset * reset_loss(w_reset, e_motion, e_stereo, cfg.tau_reset);
    out.d_fused = cfg.alpha_disp * huber_grad(d_fused, d_gt, cfg.huber_delta);
    out.d_fusion = cfg.alpha_fusion * fusion_loss_grad(w_fusion, e_motion, e_stereo, cfg.tau_fusion, cfg.alpha_reg);
    out.d_reset = cfg.alpha_reset * reset_loss_grad(w_reset, e_motion, e_stereo, cfg.tau_reset);
    return out;
}

double total_loss(const Map& d_fused, const Map& d_gt, const Map& w_reset, const Map& w_fusion,
                  const Map& e_motion, const Map& e_stereo, const LossConfig& config,
                  const Mask& mask) {
    require_same_shape(d_fused, d_gt, "total_loss");
    require_same_shape(d_fused, w_reset, "total_loss");
    require_same_shape(d_fused, w_fusion, "total_loss");
    require_same_shape(d_fused, e_motion, "total_loss");
    require_same_shape(d_fused, e_stereo, "total_loss");
    const bool use_mask = !mask.empty();
    if (use_mask) require_same_shape(d_fused, mask, "total_loss");
    double sum = 0;
    long count = 0;
    for (int r = 0; r < d_fused.height(); ++r)
        for (int c = 0; c < d_fused.width(); ++c) {
            if (use_mask && !mask(r, c)) continue;
            sum += pixel_loss(d_fused(r, c), d_gt(r, c), w_reset(r, c), w_fusion(r, c), e_motion(r, c),
                              e_stereo(r, c), config)
                       .total;
            ++count;
        }
    return count ? sum / count : 0.0;
}

}  // namespace tempofuse
