#pragma once

#include <span>

#include "tempofuse/grid.hpp"

namespace tempofuse {

struct LossConfig {
    double tau_reset = 5.0;
    double tau_fusion = 1.0;
    double alpha_reg = 0.2;
    double alpha_disp = 1.0;
    double alpha_fusion = 1.0;
    double alpha_reset = 1.0;
    double huber_delta = 1.0;

    void validate() const;
};

double huber(double pred, double gt, double delta);
/// d huber / d pred; 0 at pred == gt.
double huber_grad(double pred, double gt, double delta);

/// w_r when motion is worse by more than tau, 1 - w_r when better by more
/// than tau, 0 in the dead zone.
double reset_loss(double w_reset, double e_motion, double e_stereo, double tau_reset);
double reset_loss_grad(double w_reset, double e_motion, double e_stereo, double tau_reset);

/// As reset_loss, but the dead zone pulls w_f toward 0.5 with alpha_reg |w_f - 0.5|.
double fusion_loss(double w_fusion, double e_motion, double e_stereo, double tau_fusion,
                   double alpha_reg);
double fusion_loss_grad(double w_fusion, double e_motion, double e_stereo, double tau_fusion,
                        double alpha_reg);

struct PixelLoss {
    double total = 0;
    double d_fused = 0;  // d total / d d_F
    double d_reset = 0;  // d total / d w_r (holding d_F fixed)
    double d_fusion = 0; // d total / d w_f (holding d_F fixed)
};

/// Weighted sum of the three terms for one pixel, with partial subgradients.
PixelLoss pixel_loss(double d_fused, double d_gt, double w_reset, double w_fusion, double e_motion,
                     double e_stereo, const LossConfig& config);

/// Mean of pixel_loss().total over `mask` (all pixels when mask is empty).
/// Returns 0 when no pixel is selected.
double total_loss(const Map& d_fused, const Map& d_gt, const Map& w_reset, const Map& w_fusion,
                  const Map& e_motion, const Map& e_stereo, const LossConfig& config,
                  const Mask& mask = {});

}  // namespace tempofuse
