#include "kkl/linfilter.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>

namespace kkl {

namespace {

Complex polyval(const std::vector<double>& coeffs, Complex s) {
    Complex acc(0.0, 0.0);
    for (size_t i = coeffs.size(); i-- > 0;) acc = acc * s + coeffs[i];
    return acc;
}

Complex polyval_deriv(const std::vector<double>& coeffs, Complex s) {
    Complex acc(0.0, 0.0);
    for (size_t i = coeffs.size(); i-- > 1;)
        acc = acc * s + static_cast<double>(i) * coeffs[i];
    return acc;
}

}  // namespace

std::vector<Complex> polynomial_roots(const std::vector<double>& coeffs) {
    size_t degree = coeffs.size();
    while (degree > 0 && coeffs[degree - 1] == 0.0) --degree;
    if (degree < 2) throw InputError("polynomial_roots: degree must be >= 1");
    --degree;

    // Companion matrix of the monic polynomial.
    Mat companion = Mat::Zero(static_cast<long>(degree), static_cast<long>(degree));
    double lead = coeffs[degree];
    for (size_t i = 0; i < degree; ++i)
        companion(0, static_cast<long>(i)) = -coeffs[degree - 1 - i] / lead;
    for (size_t i = 1; i < degree; ++i)
        companion(static_cast<long>(i), static_cast<long>(i - 1)) = 1.0;

    Eigen::EigenSolver<Mat> solver(companion, /*computeEigenvectors=*/false);
    if (solver.info() != Eigen::Success)
        throw NumericalError("polynomial_roots: eigen solver failed");

    double coeff_scale = 0.0;
    for (double c : coeffs) coeff_scale = std::max(coeff_scale, std::abs(c));

    std::vector<Complex> roots(degree);
    for (size_t i = 0; i < degree; ++i) {
        Complex z = solver.eigenvalues()(static_cast<long>(i));
        // Newton polish
        for (int it = 0; it < 50; ++it) {
            Complex p = polyval(coeffs, z);
            Complex dp = polyval_deriv(coeffs, z);
            if (std::abs(dp) == 0.0) break;
            Complex step = p / dp;
            z -= step;
            if (std::abs(step) <= 1e-15 * (1.0 + std::abs(z))) break;
        }
        double zmag = std::max(1.0, std::abs(z));
        double residual_scale = coeff_scale * std::pow(zmag, static_cast<double>(degree));
        double residual = std::abs(polyval(coeffs, z));
        if (residual > 1e-10 * residual_scale)
            throw NumericalError("polynomial_roots: polish residual too large",
                                 residual);
        roots[i] = z;
    }

    // Snap conjugate structure: tiny imaginary parts are artifacts.
    for (auto& z : roots)
        if (std::abs(z.imag()) < 1e-10 * std::max(1.0, std::abs(z.real())))
            z = Complex(z.real(), 0.0);
    return roots;
}

std::vector<double> reverse_bessel_coeffs(int order) {
    if (order < 0) throw InputError("reverse_bessel_coeffs: order >= 0");
    std::vector<double> prev{1.0};               // theta_0
    if (order == 0) return prev;
    std::vector<double> cur{1.0, 1.0};           // theta_1 = 1 + s
    for (int n = 2; n <= order; ++n) {
        std::vector<double> next(static_cast<size_t>(n) + 1, 0.0);
        double a = 2.0 * n - 1.0;
        for (size_t i = 0; i < cur.size(); ++i) next[i] += a * cur[i];
        for (size_t i = 0; i < prev.size(); ++i) next[i + 2] += prev[i];
        prev = std::move(cur);
        cur = std::move(next);
    }
    return cur;
}

std::vector<Complex> bessel_poles_raw(int order) {
    if (order < 1) throw InputError("bessel_poles_raw: order >= 1");
    auto roots = polynomial_roots(reverse_bessel_coeffs(order));
    sort_poles(roots);
    return roots;
}

double bessel_cutoff_scale(int order) {
    if (order < 1) throw InputError("bessel_cutoff_scale: order >= 1");
    static std::map<int, double> cache;
    static std::mutex mutex;
    {
        std::lock_guard<std::mutex> lock(mutex);
        auto it = cache.find(order);
        if (it != cache.end()) return it->second;
    }
    // |theta_n(jw)|^2 = 2 theta_n(0)^2 at the -3 dB point; the Bessel
    // magnitude response is monotone so bisection is safe.
    auto coeffs = reverse_bessel_coeffs(order);
    double dc = coeffs[0];
    auto excess = [&](double w) {
        return std::norm(polyval(coeffs, Complex(0.0, w))) - 2.0 * dc * dc;
    };
    double lo = 0.0, hi = 1.0;
    while (excess(hi) < 0.0) {
        hi *= 2.0;
        if (hi > 1e6)
            throw NumericalError("bessel_cutoff_scale: bracketing failed");
    }
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        (excess(mid) < 0.0 ? lo : hi) = mid;
        if (hi - lo <= 1e-15 * hi) break;
    }
    double scale = 0.5 * (lo + hi);
    std::lock_guard<std::mutex> lock(mutex);
    cache.emplace(order, scale);
    return scale;
}

std::vector<Complex> bessel_poles(int order, double omega_c) {
    if (omega_c <= 0) throw InputError("bessel_poles: omega_c must be > 0");
    double factor = 2.0 * M_PI * omega_c / bessel_cutoff_scale(order);
    auto poles = bessel_poles_raw(order);
    for (auto& p : poles) p *= factor;
    return poles;
}

void sort_poles(std::vector<Complex>& poles) {
    std::sort(poles.begin(), poles.end(), [](const Complex& a, const Complex& b) {
        double ia = std::abs(a.imag()), ib = std::abs(b.imag());
        if (ia != ib) return ia < ib;
        if (a.real() != b.real()) return a.real() < b.real();
        return a.imag() < b.imag();
    });
}

Mat poles_to_block_diag(const std::vector<Complex>& poles) {
    std::vector<Complex> sorted = poles;
    sort_poles(sorted);
    long n = static_cast<long>(sorted.size());
    Mat D = Mat::Zero(n, n);
    long pos = 0;
    for (size_t i = 0; i < sorted.size();) {
        const Complex& p = sorted[i];
        if (p.imag() == 0.0) {
            D(pos, pos) = p.real();
            pos += 1;
            i += 1;
            continue;
        }
        if (i + 1 >= sorted.size())
            throw InputError("poles_to_block_diag: unpaired complex pole");
        const Complex& q = sorted[i + 1];
        double tol = 1e-9 * std::max(1.0, std::abs(p));
        if (std::abs(q.real() - p.real()) > tol ||
            std::abs(q.imag() + p.imag()) > tol)
            throw InputError("poles_to_block_diag: set not conjugate-closed");
        double re = 0.5 * (p.real() + q.real());
        double im = std::abs(p.imag());
        D(pos, pos) = re;
        D(pos, pos + 1) = im;
        D(pos + 1, pos) = -im;
        D(pos + 1, pos + 1) = re;
        pos += 2;
        i += 2;
    }
    return D;
}

double min_decay_rate(const std::vector<Complex>& poles) {
    double lambda = std::numeric_limits<double>::infinity();
    for (const auto& p : poles) lambda = std::min(lambda, std::abs(p.real()));
    return lambda;
}

bool is_hurwitz(const Mat& D, double margin) {
    Eigen::EigenSolver<Mat> solver(D, /*computeEigenvectors=*/false);
    if (solver.info() != Eigen::Success) return false;
    for (long i = 0; i < D.rows(); ++i)
        if (solver.eigenvalues()(i).real() >= -margin) return false;
    return true;
}

int kalman_rank(const Mat& D, const Mat& F) {
    long n = D.rows();
    Mat ctrb(n, n * F.cols());
    Mat block = F;
    for (long k = 0; k < n; ++k) {
        ctrb.middleCols(k * F.cols(), F.cols()) = block;
        block = D * block;
    }
    Eigen::JacobiSVD<Mat> svd(ctrb);
    double thresh = 1e-10 * svd.singularValues()(0);
    int rank = 0;
    for (long i = 0; i < svd.singularValues().size(); ++i)
        if (svd.singularValues()(i) > thresh) ++rank;
    return rank;
}

FilterDesign build_design(double omega_c, int d_x, int d_y) {
    if (omega_c <= 0) throw InputError("build_design: omega_c must be > 0");
    if (d_x < 1 || d_y < 1) throw InputError("build_design: bad dimensions");
    FilterDesign design;
    design.omega_c = omega_c;
    design.d_z = d_y * (d_x + 1);
    design.poles = bessel_poles(design.d_z, omega_c);
    sort_poles(design.poles);
    design.D = poles_to_block_diag(design.poles);
    design.F = Mat::Ones(design.d_z, d_y);
    design.lambda_min = min_decay_rate(design.poles);
    if (kalman_rank(design.D, design.F) != design.d_z)
        throw NumericalError("build_design: (D, F) not controllable at omega_c=" +
                             format_double(omega_c));
    return design;
}

Mat solve_lyapunov(const Mat& D, const Mat& Q) {
    long n = D.rows();
    if (D.cols() != n || Q.rows() != n || Q.cols() != n)
        throw InputError("solve_lyapunov: shape mismatch");
    if (!is_hurwitz(D)) throw InputError("solve_lyapunov: D is not Hurwitz");

    // vec(D P + P D^T) = (I (x) D + D (x) I) vec(P)
    Mat kron = Mat::Zero(n * n, n * n);
    for (long i = 0; i < n; ++i)
        for (long j = 0; j < n; ++j)
            for (long k = 0; k < n; ++k) {
                kron(i + j * n, k + j * n) += D(i, k);   // I (x) D
                kron(i + j * n, i + k * n) += D(j, k);   // D (x) I
            }
    Vec rhs(n * n);
    for (long j = 0; j < n; ++j)
        for (long i = 0; i < n; ++i) rhs(i + j * n) = -Q(i, j);
    Vec sol = kron.fullPivLu().solve(rhs);
    Mat P(n, n);
    for (long j = 0; j < n; ++j)
        for (long i = 0; i < n; ++i) P(i, j) = sol(i + j * n);
    P = 0.5 * (P + P.transpose()).eval();

    double residual = (D * P + P * D.transpose() + Q).norm();
    double qnorm = std::max(Q.norm(), 1e-300);
    if (residual > 1e-10 * qnorm)
        throw NumericalError("solve_lyapunov: residual " +
                                 format_double(residual / qnorm) +
                                 " exceeds tolerance",
                             residual);
    return P;
}

double h2_norm(const Mat& D) {
    Mat P = solve_lyapunov(D, Mat::Identity(D.rows(), D.cols()));
    return std::sqrt(P.trace());
}

double h2_norm_Gz(const FilterDesign& design) { return h2_norm(design.D); }

double frequency_gain(const Mat& D, const Mat& F, double omega) {
    long n = D.rows();
    CMat A = -D.cast<Complex>();
    for (long i = 0; i < n; ++i) A(i, i) += Complex(0.0, omega);
    CMat G = A.partialPivLu().solve(F.cast<Complex>());
    Eigen::JacobiSVD<CMat> svd(G);
    return svd.singularValues()(0);
}

namespace {

// True if H(gamma) has an eigenvalue within `tol` of the imaginary axis,
// meaning gamma <= ||G||_inf.
bool hamiltonian_has_imag_eigenvalue(const Mat& D, const Mat& F, double gamma,
                                     bool& ok) {
    long n = D.rows();
    Mat H(2 * n, 2 * n);
    H.topLeftCorner(n, n) = D;
    H.topRightCorner(n, n) = (F * F.transpose()) / gamma;
    H.bottomLeftCorner(n, n) = -Mat::Identity(n, n) / gamma;
    H.bottomRightCorner(n, n) = -D.transpose();
    Eigen::EigenSolver<Mat> solver(H, /*computeEigenvectors=*/false);
    ok = solver.info() == Eigen::Success;
    if (!ok) return false;
    double scale = std::max(1.0, H.norm());
    for (long i = 0; i < 2 * n; ++i)
        if (std::abs(solver.eigenvalues()(i).real()) <= 1e-9 * scale)
            return true;
    return false;
}

double hinf_grid_fallback(const Mat& D, const Mat& F) {
    Eigen::EigenSolver<Mat> solver(D, false);
    double lambda_min = std::numeric_limits<double>::infinity();
    for (long i = 0; i < D.rows(); ++i)
        lambda_min = std::min(lambda_min, std::abs(solver.eigenvalues()(i).real()));
    if (!std::isfinite(lambda_min) || lambda_min <= 0)
        throw NumericalError("hinf_norm: cannot scale fallback grid");

    const int kGrid = 10000;
    std::vector<double> grid;
    grid.reserve(kGrid + 1);
    grid.push_back(0.0);
    double lo = 1e-4 * lambda_min, hi = 1e4 * lambda_min;
    double ratio = std::log(hi / lo);
    for (int i = 0; i < kGrid; ++i)
        grid.push_back(lo * std::exp(ratio * static_cast<double>(i) / (kGrid - 1)));

    double best = -1.0;
    size_t best_idx = 0;
    for (size_t i = 0; i < grid.size(); ++i) {
        double g = frequency_gain(D, F, grid[i]);
        if (g > best) {
            best = g;
            best_idx = i;
        }
    }
    if (best_idx + 1 == grid.size())
        throw NumericalError(
            "hinf_norm: fallback grid peak at upper edge; widen the grid");

    // Golden-section refinement around the best bracket.
    double a = grid[best_idx == 0 ? 0 : best_idx - 1];
    double b = grid[best_idx + 1];
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
    double f1 = frequency_gain(D, F, x1), f2 = frequency_gain(D, F, x2);
    for (int it = 0; it < 100 && (b - a) > 1e-9 * (1.0 + b); ++it) {
        if (f1 < f2) {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + gr * (b - a);
            f2 = frequency_gain(D, F, x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - gr * (b - a);
            f1 = frequency_gain(D, F, x1);
        }
    }
    return std::max(best, std::max(f1, f2));
}

}  // namespace

double hinf_norm(const Mat& D, const Mat& F) {
    if (D.rows() != D.cols() || F.rows() != D.rows())
        throw InputError("hinf_norm: shape mismatch");
    if (!is_hurwitz(D)) throw InputError("hinf_norm: D is not Hurwitz");

    // Probe gains to seed the bisection bracket.
    Eigen::EigenSolver<Mat> solver(D, false);
    double lambda_min = std::numeric_limits<double>::infinity();
    double freq_scale = 0.0;
    for (long i = 0; i < D.rows(); ++i) {
        Complex ev = solver.eigenvalues()(i);
        lambda_min = std::min(lambda_min, std::abs(ev.real()));
        freq_scale = std::max(freq_scale, std::abs(ev));
        if (ev.imag() != 0.0) freq_scale = std::max(freq_scale, std::abs(ev.imag()));
    }
    double probe_max = frequency_gain(D, F, 0.0);
    for (long i = 0; i < D.rows(); ++i) {
        double wi = std::abs(solver.eigenvalues()(i).imag());
        if (wi > 0) probe_max = std::max(probe_max, frequency_gain(D, F, wi));
    }
    for (double w : {0.1 * lambda_min, lambda_min, 10.0 * lambda_min, freq_scale})
        if (w > 0) probe_max = std::max(probe_max, frequency_gain(D, F, w));

    bool ambiguous = false;
    double lo = probe_max;           // certainly <= ||G||inf
    double hi = 2.0 * probe_max;
    int doublings = 0;
    for (;;) {
        bool ok = true;
        bool crossing = hamiltonian_has_imag_eigenvalue(D, F, hi, ok);
        if (!ok) {
            ambiguous = true;
            break;
        }
        if (!crossing) break;
        hi *= 2.0;
        if (++doublings > 60) {
            ambiguous = true;
            break;
        }
    }
    if (!ambiguous) {
        for (int it = 0; it < 200 && (hi - lo) > 1e-6 * lo; ++it) {
            double mid = 0.5 * (lo + hi);
            bool ok = true;
            bool crossing = hamiltonian_has_imag_eigenvalue(D, F, mid, ok);
            if (!ok) {
                ambiguous = true;
                break;
            }
            (crossing ? lo : hi) = mid;
        }
    }
    if (!ambiguous) {
        // The bisection brackets the norm to 1e-6; polish by locating the
        // peak frequency from the crossing eigenvalues of H(lo) and
        // evaluating the gain there (the gain at the true peak IS the norm,
        // and the gain is flat to second order around it).
        double best_w = 0.0;
        double best = frequency_gain(D, F, 0.0);
        long n = D.rows();
        Mat H(2 * n, 2 * n);
        H.topLeftCorner(n, n) = D;
        H.topRightCorner(n, n) = (F * F.transpose()) / lo;
        H.bottomLeftCorner(n, n) = -Mat::Identity(n, n) / lo;
        H.bottomRightCorner(n, n) = -D.transpose();
        Eigen::EigenSolver<Mat> hsolver(H, false);
        if (hsolver.info() == Eigen::Success) {
            double scale = std::max(1.0, H.norm());
            for (long i = 0; i < 2 * n; ++i) {
                Complex ev = hsolver.eigenvalues()(i);
                if (std::abs(ev.real()) <= 1e-6 * scale && ev.imag() > 0) {
                    double g = frequency_gain(D, F, ev.imag());
                    if (g > best) {
                        best = g;
                        best_w = ev.imag();
                    }
                }
            }
        }
        // golden-section polish in a narrow bracket around the peak
        double a = best_w > 0 ? best_w * 0.99 : 0.0;
        double b = best_w > 0 ? best_w * 1.01 : 0.01 * lambda_min;
        const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
        double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
        double f1 = frequency_gain(D, F, x1), f2 = frequency_gain(D, F, x2);
        for (int it = 0; it < 80 && (b - a) > 1e-12 * (1.0 + b); ++it) {
            if (f1 < f2) {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + gr * (b - a);
                f2 = frequency_gain(D, F, x2);
            } else {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - gr * (b - a);
                f1 = frequency_gain(D, F, x1);
            }
        }
        double result = std::max({best, f1, f2});
        // the polished gain must land inside the bisection bracket
        if (result >= lo * (1.0 - 1e-9) && result <= hi * (1.0 + 1e-9))
            return result;
        ambiguous = true;
    }
    log_debug("hinf_norm: falling back to dense frequency grid");
    return hinf_grid_fallback(D, F);
}

double hinf_norm_Geps(const FilterDesign& design) {
    return hinf_norm(design.D, design.F);
}

nlohmann::json design_to_json(const FilterDesign& design) {
    nlohmann::json j;
    j["omega_c"] = design.omega_c;
    j["d_z"] = design.d_z;
    auto poles = nlohmann::json::array();
    for (const auto& p : design.poles)
        poles.push_back({p.real(), p.imag()});
    j["poles"] = poles;
    std::vector<double> d_flat, f_flat;
    for (long i = 0; i < design.D.rows(); ++i)
        for (long k = 0; k < design.D.cols(); ++k) d_flat.push_back(design.D(i, k));
    for (long i = 0; i < design.F.rows(); ++i)
        for (long k = 0; k < design.F.cols(); ++k) f_flat.push_back(design.F(i, k));
    j["D"] = d_flat;
    j["F"] = f_flat;
    j["d_y"] = static_cast<int>(design.F.cols());
    j["lambda_min"] = design.lambda_min;
    return j;
}

FilterDesign design_from_json(const nlohmann::json& j) {
    FilterDesign design;
    design.omega_c = j.at("omega_c").get<double>();
    design.d_z = j.at("d_z").get<int>();
    for (const auto& p : j.at("poles"))
        design.poles.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    int d_y = j.at("d_y").get<int>();
    design.D.resize(design.d_z, design.d_z);
    design.F.resize(design.d_z, d_y);
    const auto& d_flat = j.at("D");
    const auto& f_flat = j.at("F");
    for (long i = 0; i < design.d_z; ++i)
        for (long k = 0; k < design.d_z; ++k)
            design.D(i, k) = d_flat.at(static_cast<size_t>(i * design.d_z + k)).get<double>();
    for (long i = 0; i < design.d_z; ++i)
        for (long k = 0; k < d_y; ++k)
            design.F(i, k) = f_flat.at(static_cast<size_t>(i * d_y + k)).get<double>();
    design.lambda_min = j.at("lambda_min").get<double>();
    return design;
}

}  // namespace kkl
