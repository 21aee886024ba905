#pragma once

// Parametric loss model  L(N, D) = E + A / N^alpha + B / D^beta
// with N in millions of parameters and D in billions of tokens.
//
// Fitting is plain least squares on the losses. For fixed (alpha, beta) the
// model is linear in (E, A, B), so the search runs over the exponents only:
// a 0.01 grid on [0.05, 1.5]^2, then Nelder-Mead from the best grid point.
// The inner linear problem is solved under E >= 0, A, B >= kPositivityFloor
// by enumerating active sets.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <istream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "ternpack/error.hpp"

namespace ternpack::scaling {

struct LossObservation {
    double n_params = 0.0; // millions, non-embedding
    double d_tokens = 0.0; // billions
    double loss = 0.0;     // nats

    friend bool operator==(const LossObservation&, const LossObservation&) = default;
};

struct PowerLawFit {
    double E = 0.0;
    double A = 0.0;
    double alpha = 0.0;
    double B = 0.0;
    double beta = 0.0;

    friend bool operator==(const PowerLawFit&, const PowerLawFit&) = default;
};

struct FitReport {
    PowerLawFit fit;
    double r_squared = 0.0;
    double rss = 0.0;
    std::vector<double> residuals; // predicted - actual
};

inline constexpr double kPositivityFloor = 1e-12;
inline constexpr std::size_t kMinObservations = 6;

inline double evaluate(const PowerLawFit& f, double n_millions, double d_billions) {
    if (!(n_millions > 0.0) || !(d_billions > 0.0) || !std::isfinite(n_millions) || !std::isfinite(d_billions)) {
        throw ValidationError("scaling law needs positive finite N and D");
    }
    return f.E + f.A / std::pow(n_millions, f.alpha) + f.B / std::pow(d_billions, f.beta);
}

inline double residual_sum_of_squares(const PowerLawFit& f, const std::vector<LossObservation>& obs) {
    double rss = 0.0;
    for (const auto& o : obs) {
        const double r = evaluate(f, o.n_params, o.d_tokens) - o.loss;
        rss += r * r;
    }
    return rss;
}

/// 1 - SS_res / SS_tot. When every loss is identical SS_tot is zero; the
/// result is then 1 if the residuals vanish (relative 1e-9) and 0 otherwise.
inline double r_squared(const PowerLawFit& f, const std::vector<LossObservation>& obs) {
    if (obs.size() < 2) {
        throw ValidationError("r_squared needs at least 2 observations");
    }
    double mean = 0.0;
    for (const auto& o : obs) {
        mean += o.loss;
    }
    mean /= static_cast<double>(obs.size());

    const bool constant = std::all_of(obs.begin(), obs.end(), [&](const LossObservation& o) {
        return o.loss == obs.front().loss;
    });
    double ss_res = 0.0;
    double ss_tot = 0.0;
    double max_abs_res = 0.0;
    for (const auto& o : obs) {
        const double r = evaluate(f, o.n_params, o.d_tokens) - o.loss;
        ss_res += r * r;
        max_abs_res = std::max(max_abs_res, std::fabs(r));
        ss_tot += (o.loss - mean) * (o.loss - mean);
    }
    if (constant || ss_tot == 0.0) {
        return max_abs_res <= 1e-9 * std::max(1.0, std::fabs(obs.front().loss)) ? 1.0 : 0.0;
    }
    return 1.0 - ss_res / ss_tot;
}

namespace detail {

struct LinearSolution {
    double E = 0.0;
    double A = 0.0;
    double B = 0.0;
    double rss = std::numeric_limits<double>::infinity();
};

/// Profiles out (E, A, B) for fixed exponents.
class LinearProfile {
public:
    explicit LinearProfile(const std::vector<LossObservation>& obs)
        : obs_(obs), log_n_(obs.size()), log_d_(obs.size()), y_(static_cast<Eigen::Index>(obs.size())) {
        for (std::size_t i = 0; i < obs.size(); ++i) {
            log_n_[i] = std::log(obs[i].n_params);
            log_d_[i] = std::log(obs[i].d_tokens);
            y_(static_cast<Eigen::Index>(i)) = obs[i].loss;
        }
    }

    Eigen::MatrixXd design(double alpha, double beta) const {
        const auto n = static_cast<Eigen::Index>(obs_.size());
        Eigen::MatrixXd X(n, 3);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto k = static_cast<std::size_t>(i);
            X(i, 0) = 1.0;
            X(i, 1) = std::exp(-alpha * log_n_[k]);
            X(i, 2) = std::exp(-beta * log_d_[k]);
        }
        return X;
    }

    LinearSolution solve(double alpha, double beta) const {
        const Eigen::MatrixXd X = design(alpha, beta);
        const std::array<double, 3> lower{0.0, kPositivityFloor, kPositivityFloor};
        LinearSolution best;
        // bit i set => coefficient i pinned at its lower bound
        for (unsigned pinned = 0; pinned < 8; ++pinned) {
            std::array<double, 3> coef{};
            Eigen::VectorXd target = y_;
            std::vector<Eigen::Index> free;
            for (Eigen::Index c = 0; c < 3; ++c) {
                if (pinned & (1u << c)) {
                    coef[static_cast<std::size_t>(c)] = lower[static_cast<std::size_t>(c)];
                    target -= X.col(c) * lower[static_cast<std::size_t>(c)];
                } else {
                    free.push_back(c);
                }
            }
            if (!free.empty()) {
                Eigen::MatrixXd sub(X.rows(), static_cast<Eigen::Index>(free.size()));
                for (std::size_t j = 0; j < free.size(); ++j) {
                    sub.col(static_cast<Eigen::Index>(j)) = X.col(free[j]);
                }
                const Eigen::VectorXd sol = sub.colPivHouseholderQr().solve(target);
                bool feasible = true;
                for (std::size_t j = 0; j < free.size(); ++j) {
                    const double v = sol(static_cast<Eigen::Index>(j));
                    const auto c = static_cast<std::size_t>(free[j]);
                    if (!std::isfinite(v) || v < lower[c]) {
                        feasible = false;
                    }
                    coef[c] = v;
                }
                if (!feasible) {
                    continue;
                }
            }
            const Eigen::Vector3d c3(coef[0], coef[1], coef[2]);
            const double rss = (X * c3 - y_).squaredNorm();
            if (rss < best.rss) {
                best = LinearSolution{coef[0], coef[1], coef[2], rss};
            }
        }
        return best;
    }

    Eigen::Index rank_at(double alpha, double beta) const {
        return design(alpha, beta).colPivHouseholderQr().rank();
    }

private:
    const std::vector<LossObservation>& obs_;
    std::vector<double> log_n_;
    std::vector<double> log_d_;
    Eigen::VectorXd y_;
};

inline constexpr double kExponentLow = 1e-6;
inline constexpr double kExponentHigh = 2.0 - 1e-6;

// Nelder-Mead on the profiled RSS over (alpha, beta).
template <class Objective>
std::array<double, 2> nelder_mead(Objective&& f, std::array<double, 2> start, double step, double rss_tol,
                                  int max_iter) {
    using Point = std::array<double, 2>;
    std::array<Point, 3> p{start, Point{start[0] + step, start[1]}, Point{start[0], start[1] + step}};
    std::array<double, 3> fv{f(p[0]), f(p[1]), f(p[2])};

    for (int iter = 0; iter < max_iter; ++iter) {
        std::array<int, 3> idx{0, 1, 2};
        std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return fv[static_cast<std::size_t>(a)] < fv[static_cast<std::size_t>(b)]; });
        const std::array<Point, 3> ps{p[static_cast<std::size_t>(idx[0])], p[static_cast<std::size_t>(idx[1])], p[static_cast<std::size_t>(idx[2])]};
        const std::array<double, 3> fs{fv[static_cast<std::size_t>(idx[0])], fv[static_cast<std::size_t>(idx[1])], fv[static_cast<std::size_t>(idx[2])]};
        p = ps;
        fv = fs;

        const double spread = fv[2] - fv[0];
        double diameter = 0.0;
        for (std::size_t i = 1; i < 3; ++i) {
            diameter = std::max(diameter, std::hypot(p[i][0] - p[0][0], p[i][1] - p[0][1]));
        }
        if ((std::isfinite(spread) && spread <= rss_tol * fv[0]) || diameter < 1e-13) {
            break;
        }

        const Point centroid{(p[0][0] + p[1][0]) / 2.0, (p[0][1] + p[1][1]) / 2.0};
        auto along = [&](double t) {
            return Point{centroid[0] + t * (p[2][0] - centroid[0]), centroid[1] + t * (p[2][1] - centroid[1])};
        };
        const Point reflected = along(-1.0);
        const double fr = f(reflected);
        if (fr < fv[0]) {
            const Point expanded = along(-2.0);
            const double fe = f(expanded);
            if (fe < fr) {
                p[2] = expanded;
                fv[2] = fe;
            } else {
                p[2] = reflected;
                fv[2] = fr;
            }
            continue;
        }
        if (fr < fv[1]) {
            p[2] = reflected;
            fv[2] = fr;
            continue;
        }
        const bool outside = fr < fv[2];
        const Point contracted = along(outside ? -0.5 : 0.5);
        const double fc = f(contracted);
        if (fc < (outside ? fr : fv[2])) {
            p[2] = contracted;
            fv[2] = fc;
            continue;
        }
        for (std::size_t i = 1; i < 3; ++i) {
            p[i] = Point{p[0][0] + 0.5 * (p[i][0] - p[0][0]), p[0][1] + 0.5 * (p[i][1] - p[0][1])};
            fv[i] = f(p[i]);
        }
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < 3; ++i) {
        if (fv[i] < fv[best]) {
            best = i;
        }
    }
    return p[best];
}

inline void validate_observations(const std::vector<LossObservation>& obs) {
    if (obs.size() < kMinObservations) {
        throw ValidationError("fit needs at least " + std::to_string(kMinObservations) + " observations, got " +
                              std::to_string(obs.size()));
    }
    for (std::size_t i = 0; i < obs.size(); ++i) {
        const auto& o = obs[i];
        if (!(o.n_params > 0.0) || !(o.d_tokens > 0.0) || !(o.loss > 0.0) || !std::isfinite(o.n_params) ||
            !std::isfinite(o.d_tokens) || !std::isfinite(o.loss)) {
            throw ValidationError("observation " + std::to_string(i) + " must have positive finite N, D and loss");
        }
    }
    const auto distinct = [&](auto member) {
        return std::any_of(obs.begin(), obs.end(), [&](const LossObservation& o) { return o.*member != obs.front().*member; });
    };
    if (!distinct(&LossObservation::n_params)) {
        throw UnidentifiableFitError("all observations share one parameter count; A and alpha are unidentifiable");
    }
    if (!distinct(&LossObservation::d_tokens)) {
        throw UnidentifiableFitError("all observations share one token count; B and beta are unidentifiable");
    }
}

} // namespace detail

struct FitOptions {
    double grid_low = 0.05;
    double grid_high = 1.5;
    double grid_step = 0.01;
    double rss_tolerance = 1e-10;
    int max_iterations = 20000;
};

/// Least-squares fit of all five parameters. Deterministic.
inline FitReport fit(const std::vector<LossObservation>& obs, const FitOptions& options = {}) {
    detail::validate_observations(obs);
    const detail::LinearProfile profile(obs);
    if (profile.rank_at(0.5, 0.5) < 3) {
        throw UnidentifiableFitError("observations do not separate the N and D terms");
    }

    // Grid, ascending alpha then beta; strict < keeps the lowest on ties.
    const auto steps = static_cast<long>(std::llround((options.grid_high - options.grid_low) / options.grid_step));
    double best_rss = std::numeric_limits<double>::infinity();
    std::array<double, 2> best{options.grid_low, options.grid_low};
    for (long i = 0; i <= steps; ++i) {
        const double alpha = options.grid_low + static_cast<double>(i) * options.grid_step;
        for (long j = 0; j <= steps; ++j) {
            const double beta = options.grid_low + static_cast<double>(j) * options.grid_step;
            const double rss = profile.solve(alpha, beta).rss;
            if (rss < best_rss) {
                best_rss = rss;
                best = {alpha, beta};
            }
        }
    }
    if (!std::isfinite(best_rss)) {
        throw UnidentifiableFitError("no feasible solution on the exponent grid");
    }

    auto objective = [&](const std::array<double, 2>& x) {
        if (x[0] < detail::kExponentLow || x[0] > detail::kExponentHigh || x[1] < detail::kExponentLow ||
            x[1] > detail::kExponentHigh) {
            return std::numeric_limits<double>::infinity();
        }
        return profile.solve(x[0], x[1]).rss;
    };
    // Restart once from the result; a collapsed simplex can stall early.
    std::array<double, 2> refined = detail::nelder_mead(objective, best, options.grid_step, options.rss_tolerance,
                                                        options.max_iterations);
    refined = detail::nelder_mead(objective, refined, options.grid_step / 10.0, options.rss_tolerance,
                                  options.max_iterations);
    if (!(objective(refined) <= best_rss)) {
        refined = best;
    }

    const detail::LinearSolution lin = profile.solve(refined[0], refined[1]);
    FitReport report;
    report.fit = PowerLawFit{lin.E, lin.A, refined[0], lin.B, refined[1]};
    report.residuals.reserve(obs.size());
    for (const auto& o : obs) {
        report.residuals.push_back(evaluate(report.fit, o.n_params, o.d_tokens) - o.loss);
    }
    report.rss = residual_sum_of_squares(report.fit, obs);
    report.r_squared = r_squared(report.fit, obs);
    return report;
}

inline constexpr const char* kObservationCsvHeader = "n_params_millions,d_tokens_billions,loss";

/// Reads the observation CSV: the exact header line, then one
/// "N,D,loss" row per line. Blank lines are skipped.
inline std::vector<LossObservation> read_observations_csv(std::istream& in) {
    std::string line;
    auto strip = [](std::string& s) {
        while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) {
            s.pop_back();
        }
    };
    if (!std::getline(in, line)) {
        throw FormatError("observation file is empty");
    }
    strip(line);
    if (line != kObservationCsvHeader) {
        throw FormatError(std::string("observation file header must be '") + kObservationCsvHeader + "'");
    }
    std::vector<LossObservation> obs;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        strip(line);
        if (line.empty()) {
            continue;
        }
        std::array<double, 3> v{};
        std::istringstream fields(line);
        std::string cell;
        std::size_t k = 0;
        while (std::getline(fields, cell, ',')) {
            if (k >= 3) {
                k = 4;
                break;
            }
            try {
                std::size_t used = 0;
                v[k] = std::stod(cell, &used);
                if (used != cell.size()) {
                    throw std::invalid_argument(cell);
                }
            } catch (const std::exception&) {
                throw FormatError("line " + std::to_string(line_no) + ": cannot parse '" + cell + "'");
            }
            ++k;
        }
        if (k != 3) {
            throw FormatError("line " + std::to_string(line_no) + ": expected 3 comma-separated values");
        }
        obs.push_back(LossObservation{v[0], v[1], v[2]});
    }
    return obs;
}

} // namespace ternpack::scaling
