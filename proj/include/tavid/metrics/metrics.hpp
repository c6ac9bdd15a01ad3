// SPDX-License-Identifier: Apache-2.0
#pragma once

// Motion-statistics and interaction metrics: Pearson, RPCC, Frechet distance, pose/expression
// variance delta and the Shannon index of k-means cluster occupancy.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tavid/core/error.hpp"
#include "tavid/core/rng.hpp"
#include "tavid/data/corpus.hpp"
#include "tavid/nn/tensor.hpp"

namespace tavid::metrics {

using nn::Tensor;

/// Half-open column range of a motion matrix.
struct Dims {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
};

inline constexpr Dims kPose{0, data::kPoseDims};
inline constexpr Dims kExp{data::kPoseDims, data::kMotionDim};

struct MotionTrack {
    Tensor frames;  ///< F x d
    double fps = 25.0;
};

// ---------------------------------------------------------------------------
// Pearson and RPCC

/// Sample correlation; 0 when either sequence is constant.
inline double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw InputError("pearson: length mismatch");
    if (x.size() < 2) throw InputError("pearson: need at least 2 values");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline std::vector<double> column(const Tensor& m, std::size_t c) {
    std::vector<double> out(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) out[r] = m(r, c);
    return out;
}

/// Mean over dims of |pearson(gen_d - gt_d, speaker_d)|.
inline double rpcc(const Tensor& gen_listener, const Tensor& gt_listener, const Tensor& speaker, Dims dims) {
    if (!gen_listener.same_shape(gt_listener) || gen_listener.rows() != speaker.rows() ||
        gen_listener.cols() != speaker.cols())
        throw InputError("rpcc: tracks must share F x d, got " + gen_listener.shape_str() + ", " +
                         gt_listener.shape_str() + ", " + speaker.shape_str());
    if (gen_listener.rows() < 2) throw InputError("rpcc: need F >= 2");
    if (dims.size() == 0 || dims.end > gen_listener.cols()) throw InputError("rpcc: bad dims");
    double s = 0.0;
    for (std::size_t d = dims.begin; d < dims.end; ++d) {
        std::vector<double> res(gen_listener.rows());
        for (std::size_t r = 0; r < res.size(); ++r) res[r] = gen_listener(r, d) - gt_listener(r, d);
        s += std::abs(pearson(res, column(speaker, d)));
    }
    return s / static_cast<double>(dims.size());
}

// ---------------------------------------------------------------------------
// Frechet distance

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline constexpr double kPsdTolerance = 1e-10;

/// Mean and covariance. The covariance is symmetrized and eigenvalues in [-tol, 0) are clipped.
struct GaussianSummary {
    Vec mean;
    Mat cov;

    GaussianSummary() = default;
    GaussianSummary(Vec m, Mat c) : mean(std::move(m)), cov(std::move(c)) {
        if (cov.rows() != cov.cols() || cov.rows() != mean.size())
            throw InputError("GaussianSummary: covariance must be d x d for a d-vector mean");
        cov = 0.5 * (cov + cov.transpose());
        if (cov.size() == 0) return;
        Eigen::SelfAdjointEigenSolver<Mat> es(cov);
        Vec ev = es.eigenvalues();
        if (ev.minCoeff() < -kPsdTolerance) throw InputError("GaussianSummary: covariance is not PSD");
        if (ev.minCoeff() < 0.0) {
            ev = ev.cwiseMax(0.0);
            cov = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
        }
    }

    std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
};

/// Sample mean and unbiased covariance of the selected columns.
inline GaussianSummary summarize(const Tensor& frames, Dims dims) {
    if (frames.rows() < 2) throw InputError("summarize: need F >= 2");
    if (dims.size() == 0 || dims.end > frames.cols()) throw InputError("summarize: bad dims");
    const auto n = static_cast<Eigen::Index>(frames.rows());
    const auto d = static_cast<Eigen::Index>(dims.size());
    Mat x(n, d);
    for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index c = 0; c < d; ++c) x(r, c) = frames(static_cast<std::size_t>(r), dims.begin + c);
    Vec mu = x.colwise().mean().transpose();
    const Mat centered = x.rowwise() - mu.transpose();
    return {mu, centered.transpose() * centered / static_cast<double>(n - 1)};
}

/// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}). The trace of the square root is the sum
/// of square roots of the eigenvalues of Sa Sb, which are real and non-negative for PSD inputs.
inline double frechet_distance(const GaussianSummary& a, const GaussianSummary& b) {
    if (a.dim() != b.dim()) throw InputError("frechet_distance: dimension mismatch");
    const double dmean = (a.mean - b.mean).squaredNorm();
    if (a.dim() == 0) return 0.0;
    Eigen::EigenSolver<Mat> es(a.cov * b.cov, false);
    if (es.info() != Eigen::Success) throw NumericalError("frechet_distance: eigen decomposition failed");
    double tr_sqrt = 0.0;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) tr_sqrt += std::sqrt(std::max(0.0, es.eigenvalues()[i].real()));
    return std::max(0.0, dmean + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt);
}

// ---------------------------------------------------------------------------
// Variance delta

inline double mean_variance(const Tensor& frames, Dims dims) {
    if (frames.rows() < 2) throw InputError("delta_var: need F >= 2");
    if (dims.size() == 0) throw InputError("delta_var: empty dims");
    if (dims.end > frames.cols()) throw InputError("delta_var: dims outside the track");
    double s = 0.0;
    const double n = static_cast<double>(frames.rows());
    for (std::size_t d = dims.begin; d < dims.end; ++d) {
        double m = 0.0, q = 0.0;
        for (std::size_t r = 0; r < frames.rows(); ++r) m += frames(r, d);
        m /= n;
        for (std::size_t r = 0; r < frames.rows(); ++r) q += (frames(r, d) - m) * (frames(r, d) - m);
        s += q / (n - 1.0);
    }
    return s / static_cast<double>(dims.size());
}

inline double delta_var(const Tensor& gen, const Tensor& gt, Dims dims) {
    return std::abs(mean_variance(gen, dims) - mean_variance(gt, dims));
}

// ---------------------------------------------------------------------------
// Shannon index of cluster occupancy

struct KMeans {
    Tensor centroids;  ///< k x d

    /// Nearest centroid, ties to the lowest index.
    std::size_t assign(const Tensor& frames, std::size_t r, Dims dims) const {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < centroids.rows(); ++k) {
            double s = 0.0;
            for (std::size_t c = 0; c < dims.size(); ++c) {
                const double diff = frames(r, dims.begin + c) - centroids(k, c);
                s += diff * diff;
            }
            if (s < best_d) {
                best_d = s;
                best = k;
            }
        }
        return best;
    }
};

struct KMeansConfig {
    std::size_t k = 8;
    std::size_t iterations = 50;
    std::uint64_t seed = 0;
};

/// k-means++ seeding then Lloyd iterations. Empty clusters keep their centroid.
inline KMeans fit_kmeans(const Tensor& frames, Dims dims, const KMeansConfig& cfg) {
    if (cfg.k < 2) throw InputError("fit_kmeans: k must be >= 2");
    if (frames.rows() == 0 || dims.size() == 0 || dims.end > frames.cols())
        throw InputError("fit_kmeans: empty input");
    const std::size_t n = frames.rows(), d = dims.size();
    auto dist2 = [&](std::size_t r, const Tensor& c, std::size_t k) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += (frames(r, dims.begin + j) - c(k, j)) * (frames(r, dims.begin + j) - c(k, j));
        return s;
    };
    KMeans km{Tensor(cfg.k, d)};
    Rng rng(derive_seed(cfg.seed, "metrics.kmeans"));
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    std::size_t pick = rng.below(n);
    for (std::size_t k = 0; k < cfg.k; ++k) {
        for (std::size_t j = 0; j < d; ++j) km.centroids(k, j) = frames(pick, dims.begin + j);
        double total = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            nearest[r] = std::min(nearest[r], dist2(r, km.centroids, k));
            total += nearest[r];
        }
        if (k + 1 == cfg.k) break;
        if (total <= 0.0) throw InputError("fit_kmeans: fewer than k distinct frames");
        double u = rng.uniform() * total;
        pick = n - 1;
        for (std::size_t r = 0; r < n; ++r) {
            u -= nearest[r];
            if (u < 0.0 && nearest[r] > 0.0) {
                pick = r;
                break;
            }
        }
    }
    std::vector<std::size_t> label(n);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        for (std::size_t r = 0; r < n; ++r) label[r] = km.assign(frames, r, dims);
        Tensor sum(cfg.k, d);
        std::vector<std::size_t> count(cfg.k, 0);
        for (std::size_t r = 0; r < n; ++r) {
            ++count[label[r]];
            for (std::size_t j = 0; j < d; ++j) sum(label[r], j) += frames(r, dims.begin + j);
        }
        for (std::size_t k = 0; k < cfg.k; ++k)
            if (count[k] > 0)
                for (std::size_t j = 0; j < d; ++j) km.centroids(k, j) = sum(k, j) / static_cast<double>(count[k]);
    }
    return km;
}

/// Entropy (nats) of a histogram. Counts are summed in sorted order so relabeling is exact.
inline double shannon_index(std::vector<std::size_t> counts) {
    std::sort(counts.begin(), counts.end());
    double total = 0.0;
    for (auto c : counts) total += static_cast<double>(c);
    if (total <= 0.0) throw InputError("shannon_index: empty histogram");
    double h = 0.0;
    for (auto c : counts)
        if (c > 0) {
            const double p = static_cast<double>(c) / total;
            h -= p * std::log(p);
        }
    return h;
}

inline double sid(const Tensor& frames, const KMeans& km, Dims dims) {
    if (frames.rows() == 0) throw InputError("sid: empty input");
    std::vector<std::size_t> counts(km.centroids.rows(), 0);
    for (std::size_t r = 0; r < frames.rows(); ++r) ++counts[km.assign(frames, r, dims)];
    return shannon_index(counts);
}

/// Clusters are fitted on gt only; gen frames are assigned.
inline double delta_sid(const Tensor& gen, const Tensor& gt, Dims dims, const KMeansConfig& cfg = {}) {
    if (gen.rows() == 0 || gt.rows() == 0) throw InputError("delta_sid: empty input");
    const KMeans km = fit_kmeans(gt, dims, cfg);
    return std::abs(sid(gen, km, dims) - sid(gt, km, dims));
}

// ---------------------------------------------------------------------------
// Report

struct GroupMetrics {
    double fd = 0.0;
    double rpcc = 0.0;
    double dsid = 0.0;
    double dvar = 0.0;
};

struct MetricReport {
    std::string method = "generated";
    GroupMetrics exp;
    GroupMetrics pose;

    bool finite() const {
        for (const auto* g : {&exp, &pose})
            for (double v : {g->fd, g->rpcc, g->dsid, g->dvar})
                if (!std::isfinite(v)) return false;
        return true;
    }
};

namespace detail {

inline Tensor stack(const std::vector<const Tensor*>& parts) {
    std::size_t rows = 0;
    for (const auto* p : parts) rows += p->rows();
    Tensor out(rows, parts.empty() ? 0 : parts[0]->cols());
    std::size_t r0 = 0;
    for (const auto* p : parts) {
        std::copy(p->values().begin(), p->values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(r0 * out.cols()));
        r0 += p->rows();
    }
    return out;
}

inline std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace detail

/// Pooled comparison of two aligned sample sets. RPCC uses listening frames: frames where one
/// role is silent and the other speaks, with the speaker's ground-truth motion as reference.
inline MetricReport metric_report(const std::vector<data::Sample>& gen, const std::vector<data::Sample>& gt,
                                  std::uint64_t seed = 0) {
    if (gen.size() != gt.size()) throw InputError("metric_report: mismatched sample counts");
    if (gt.empty()) throw InputError("metric_report: no samples");
    std::vector<const Tensor*> gen_all, gt_all;
    std::vector<std::vector<double>> res_rows, spk_rows;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        for (int role : {1, 2}) {
            const Tensor& g = gen[i].motion(role);
            const Tensor& t = gt[i].motion(role);
            if (!g.same_shape(t))
                throw InputError("metric_report: sample " + std::to_string(gt[i].id) + " motion shapes differ");
            gen_all.push_back(&g);
            gt_all.push_back(&t);
        }
        const auto sched = data::schedule_from_script(gt[i].script, gt[i].frames());
        for (std::size_t f = 0; f < sched.size(); ++f) {
            int listener = 0;
            if (sched[f] == data::ActiveState::S1) listener = 2;
            if (sched[f] == data::ActiveState::S2) listener = 1;
            if (listener == 0) continue;
            const int speaker = 3 - listener;
            std::vector<double> res(data::kMotionDim), spk(data::kMotionDim);
            for (std::size_t d = 0; d < data::kMotionDim; ++d) {
                res[d] = gen[i].motion(listener)(f, d) - gt[i].motion(listener)(f, d);
                spk[d] = gt[i].motion(speaker)(f, d);
            }
            res_rows.push_back(std::move(res));
            spk_rows.push_back(std::move(spk));
        }
    }
    const Tensor g = detail::stack(gen_all), t = detail::stack(gt_all);
    Tensor residual(res_rows.size(), data::kMotionDim), speaker(res_rows.size(), data::kMotionDim);
    for (std::size_t r = 0; r < res_rows.size(); ++r)
        for (std::size_t d = 0; d < data::kMotionDim; ++d) {
            residual(r, d) = res_rows[r][d];
            speaker(r, d) = spk_rows[r][d];
        }
    const Tensor zero(residual.rows(), residual.cols());
    MetricReport rep;
    for (auto [dims, out] : {std::pair{kExp, &rep.exp}, std::pair{kPose, &rep.pose}}) {
        out->fd = frechet_distance(summarize(g, dims), summarize(t, dims));
        out->rpcc = rpcc(residual, zero, speaker, dims);
        out->dsid = delta_sid(g, t, dims, {8, 50, seed});
        out->dvar = delta_var(g, t, dims);
    }
    return rep;
}

inline constexpr const char* kReportColumns[] = {"method",    "exp_fd",  "exp_rpcc",  "exp_dsid", "exp_dvar",
                                                 "pose_fd",   "pose_rpcc", "pose_dsid", "pose_dvar"};

inline std::string report_csv(const std::vector<MetricReport>& reps) {
    std::ostringstream os;
    for (std::size_t i = 0; i < std::size(kReportColumns); ++i) os << (i ? "," : "") << kReportColumns[i];
    os << '\n';
    for (const auto& r : reps) {
        os << r.method;
        for (const auto* g : {&r.exp, &r.pose})
            for (double v : {g->fd, g->rpcc, g->dsid, g->dvar}) os << ',' << detail::fmt(v);
        os << '\n';
    }
    return os.str();
}

inline std::string report_md(const std::vector<MetricReport>& reps) {
    std::ostringstream os;
    os << "| Method | Exp FD | Exp RPCC | Exp ΔSID | Exp ΔVar | Pose FD | Pose RPCC | Pose ΔSID | Pose ΔVar |\n";
    os << "|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& r : reps) {
        os << "| " << r.method;
        for (const auto* g : {&r.exp, &r.pose})
            for (double v : {g->fd, g->rpcc, g->dsid, g->dvar}) os << " | " << detail::fmt(v);
        os << " |\n";
    }
    return os.str();
}

}  // namespace tavid::metrics
