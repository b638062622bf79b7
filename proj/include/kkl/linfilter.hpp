#pragma once

#include "kkl/common.hpp"

#include <complex>
#include <vector>

#include "json.hpp"

namespace kkl {

/// Linear part of the observer: z' = D z + F y with D Hurwitz, built from
/// Bessel poles at cut-off 2*pi*omega_c and F fixed to all ones.
struct FilterDesign {
    double omega_c = 0.0;
    int d_z = 0;
    std::vector<Complex> poles;  // conjugate-closed, sorted by (|Im|, Re, Im)
    Mat D;
    Mat F;
    double lambda_min = 0.0;  // min |Re(pole)|
};

/// Roots of a real polynomial, coefficients in ascending degree order.
/// Companion-matrix eigenvalues polished by Newton; throws NumericalError
/// with the worst residual if polishing stalls above tolerance.
std::vector<Complex> polynomial_roots(const std::vector<double>& coeffs);

/// Reverse Bessel polynomial theta_n, ascending coefficients.
/// theta_0 = 1, theta_1 = s + 1, theta_n = (2n-1) theta_{n-1} + s^2 theta_{n-2}.
std::vector<double> reverse_bessel_coeffs(int order);

/// Roots of theta_n (the "delay-normalized" prototype poles).
std::vector<Complex> bessel_poles_raw(int order);

/// -3 dB frequency of the order-n Bessel low-pass prototype; computed once
/// per order and cached.
double bessel_cutoff_scale(int order);

/// Prototype poles normalized so the magnitude response crosses -3 dB at
/// 1 rad/s, then scaled by 2*pi*omega_c.
std::vector<Complex> bessel_poles(int order, double omega_c);

/// Deterministic pole order used everywhere: ascending |Im|, then Re, then Im.
void sort_poles(std::vector<Complex>& poles);

/// Block-diagonal real matrix: 1x1 blocks for real poles, [[Re, Im], [-Im, Re]]
/// for conjugate pairs. Input must be conjugate-closed.
Mat poles_to_block_diag(const std::vector<Complex>& poles);

double min_decay_rate(const std::vector<Complex>& poles);

bool is_hurwitz(const Mat& D, double margin = 0.0);

/// Rank of [F, DF, D^2 F, ...] with an SVD threshold.
int kalman_rank(const Mat& D, const Mat& F);

/// d_z = d_y (d_x + 1); D from Bessel poles; F all ones. Verifies that
/// (D, F) is controllable.
FilterDesign build_design(double omega_c, int d_x, int d_y);

/// Solves D P + P D^T + Q = 0 for symmetric P (Kronecker vectorization).
/// D must be Hurwitz; residual checked against 1e-10 * ||Q||_F.
Mat solve_lyapunov(const Mat& D, const Mat& Q);

/// H2 norm of G_z(s) = (sI - D)^{-1}: sqrt(trace P), D P + P D^T + I = 0.
double h2_norm(const Mat& D);
double h2_norm_Gz(const FilterDesign& design);

/// Hinf norm of G(s) = (sI - D)^{-1} F via Hamiltonian bisection (relative
/// tolerance 1e-6) with a dense log-grid + golden-section fallback.
double hinf_norm(const Mat& D, const Mat& F);
double hinf_norm_Geps(const FilterDesign& design);

/// Largest singular value of (jw I - D)^{-1} F.
double frequency_gain(const Mat& D, const Mat& F, double omega);

nlohmann::json design_to_json(const FilterDesign& design);
FilterDesign design_from_json(const nlohmann::json& j);

}  // namespace kkl
