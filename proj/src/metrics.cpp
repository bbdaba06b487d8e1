#include "onsl/metrics.hpp"

#include "onsl/parallel.hpp"
#include "onsl/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <sstream>

namespace onsl {
namespace {

Eigen::LLT<Matrix> spd_factor(const Matrix& m, const char* what) {
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() != Eigen::Success) throw InvalidArgument(std::string(what) + ": covariance is not SPD");
    return llt;
}

double log_det(const Eigen::LLT<Matrix>& llt) {
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

Matrix spd_sqrt(const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(m);
    return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

// Static k-d tree over the rows of a point matrix, used for k-NN distances.
class KdTree {
public:
    explicit KdTree(const RowMatrix& pts) : pts_(pts), idx_(static_cast<std::size_t>(pts.rows())) {
        std::iota(idx_.begin(), idx_.end(), std::size_t{0});
        if (!idx_.empty()) build(0, idx_.size());
    }

    // Distance to the k-th nearest row, skipping row `exclude` (pass npos for none).
    double kth_distance(const double* q, int k, std::size_t exclude) const {
        Heap heap;
        search(0, q, static_cast<std::size_t>(k), exclude, heap);
        return std::sqrt(heap.top());
    }

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

private:
    static constexpr std::size_t kLeaf = 16;
    using Heap = std::priority_queue<double>;

    struct Node {
        std::size_t begin, end;
        int axis = -1;  // -1 for leaves
        double split = 0.0;
        std::size_t left = 0, right = 0;
    };

    std::size_t build(std::size_t begin, std::size_t end) {
        const std::size_t id = nodes_.size();
        nodes_.push_back({begin, end});
        if (end - begin <= kLeaf) return id;
        const int d = static_cast<int>(pts_.cols());
        int axis = 0;
        double best = -1.0;
        for (int a = 0; a < d; ++a) {
            double lo = pts_(idx_[begin], a), hi = lo;
            for (std::size_t i = begin; i < end; ++i) {
                lo = std::min(lo, pts_(idx_[i], a));
                hi = std::max(hi, pts_(idx_[i], a));
            }
            if (hi - lo > best) {
                best = hi - lo;
                axis = a;
            }
        }
        const std::size_t mid = begin + (end - begin) / 2;
        std::nth_element(idx_.begin() + begin, idx_.begin() + mid, idx_.begin() + end,
                         [&](std::size_t a, std::size_t b) { return pts_(a, axis) < pts_(b, axis); });
        const double split = pts_(idx_[mid], axis);
        const std::size_t left = build(begin, mid);
        const std::size_t right = build(mid, end);
        nodes_[id].axis = axis;
        nodes_[id].split = split;
        nodes_[id].left = left;
        nodes_[id].right = right;
        return id;
    }

    void search(std::size_t node_id, const double* q, std::size_t k, std::size_t exclude, Heap& heap) const {
        const Node& node = nodes_[node_id];
        if (node.axis < 0) {
            const auto d = pts_.cols();
            for (std::size_t i = node.begin; i < node.end; ++i) {
                const std::size_t r = idx_[i];
                if (r == exclude) continue;
                double dist = 0.0;
                for (Eigen::Index a = 0; a < d; ++a) {
                    const double diff = pts_(static_cast<Eigen::Index>(r), a) - q[a];
                    dist += diff * diff;
                }
                if (heap.size() < k) {
                    heap.push(dist);
                } else if (dist < heap.top()) {
                    heap.pop();
                    heap.push(dist);
                }
            }
            return;
        }
        const double diff = q[node.axis] - node.split;
        const std::size_t near = diff < 0.0 ? node.left : node.right;
        const std::size_t far = diff < 0.0 ? node.right : node.left;
        search(near, q, k, exclude, heap);
        if (heap.size() < k || diff * diff <= heap.top()) search(far, q, k, exclude, heap);
    }

    const RowMatrix& pts_;
    std::vector<std::size_t> idx_;
    std::vector<Node> nodes_;
};

// Per-point terms d * ln(nu_i / rho_i); returns false on any zero distance.
bool knn_terms(const RowMatrix& p, const RowMatrix& q, int k, std::vector<double>& terms) {
    const KdTree tree_p(p), tree_q(q);
    const double d = static_cast<double>(p.cols());
    terms.resize(static_cast<std::size_t>(p.rows()));
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        const double* x = p.data() + i * p.cols();
        const double rho = tree_p.kth_distance(x, k, static_cast<std::size_t>(i));
        const double nu = tree_q.kth_distance(x, k, KdTree::npos);
        if (rho == 0.0 || nu == 0.0) return false;
        terms[static_cast<std::size_t>(i)] = d * std::log(nu / rho);
    }
    return true;
}

void add_jitter(RowMatrix& m, double scale, std::uint64_t seed, std::uint64_t tag) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        CounterRng rng(seed, tag, static_cast<std::uint64_t>(i));
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) += scale * rng.normal();
    }
}

}  // namespace

double kl_gaussian(const GaussianLaw& P, const GaussianLaw& Q) {
    if (P.dim() != Q.dim()) throw InvalidArgument("kl_gaussian: dimension mismatch");
    const auto lp = spd_factor(P.cov(), "kl_gaussian");
    const auto lq = spd_factor(Q.cov(), "kl_gaussian");
    const Matrix L_q = lq.matrixL();
    const Matrix a = L_q.triangularView<Eigen::Lower>().solve(Matrix(lp.matrixL()));
    const Vector diff = Q.mean() - P.mean();
    const Vector w = L_q.triangularView<Eigen::Lower>().solve(diff);
    const double d = static_cast<double>(P.dim());
    return 0.5 * (a.squaredNorm() + w.squaredNorm() - d + log_det(lq) - log_det(lp));
}

double kl_conditional_same_cov(const Vector& x, const Vector& x_hat, double h) {
    if (!(h > 0.0)) throw InvalidArgument("kl_conditional_same_cov: h must be > 0");
    if (x.size() != x_hat.size()) throw InvalidArgument("kl_conditional_same_cov: dimension mismatch");
    return std::exp(-2.0 * h) * (x - x_hat).squaredNorm() / (-2.0 * std::expm1(-2.0 * h));
}

double w2_gaussian(const GaussianLaw& P, const GaussianLaw& Q) {
    if (P.dim() != Q.dim()) throw InvalidArgument("w2_gaussian: dimension mismatch");
    spd_factor(P.cov(), "w2_gaussian");
    spd_factor(Q.cov(), "w2_gaussian");
    const Matrix sq = spd_sqrt(Q.cov());
    const Matrix middle = sq * P.cov() * sq;
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (middle + middle.transpose()), Eigen::EigenvaluesOnly);
    const double cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double w2sq = (P.mean() - Q.mean()).squaredNorm() + P.cov().trace() + Q.cov().trace() - 2.0 * cross;
    return std::sqrt(std::max(w2sq, 0.0));
}

GaussianLaw empirical_gaussian_fit(const RowMatrix& points, unsigned workers) {
    const auto n = static_cast<std::size_t>(points.rows());
    const auto d = static_cast<std::size_t>(points.cols());
    if (d == 0 || n < d + 2) throw InvalidArgument("empirical_gaussian_fit: need n >= d + 2 samples");
    Vector mean(static_cast<Eigen::Index>(d));
    std::vector<double> col(n);
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < n; ++i) col[i] = points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        mean(static_cast<Eigen::Index>(j)) = pairwise_sum(col) / static_cast<double>(n);
    }
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) pairs.emplace_back(a, b);
    std::vector<double> entries(pairs.size());
    parallel_for(pairs.size(), workers, [&](std::size_t begin, std::size_t end) {
        std::vector<double> prod(n);
        for (std::size_t p = begin; p < end; ++p) {
            const auto a = static_cast<Eigen::Index>(pairs[p].first);
            const auto b = static_cast<Eigen::Index>(pairs[p].second);
            for (std::size_t i = 0; i < n; ++i) {
                const auto r = static_cast<Eigen::Index>(i);
                prod[i] = (points(r, a) - mean(a)) * (points(r, b) - mean(b));
            }
            entries[p] = pairwise_sum(prod) / static_cast<double>(n - 1);
        }
    });
    Matrix cov(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (std::size_t p = 0; p < pairs.size(); ++p) {
        const auto a = static_cast<Eigen::Index>(pairs[p].first);
        const auto b = static_cast<Eigen::Index>(pairs[p].second);
        cov(a, b) = cov(b, a) = entries[p];
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov, Eigen::EigenvaluesOnly);
    const double top = es.eigenvalues().maxCoeff();
    if (!(top > 0.0) || es.eigenvalues().minCoeff() <= 1e-12 * top)
        throw InvalidArgument("empirical_gaussian_fit: sample covariance is rank deficient");
    return GaussianLaw(mean, cov);
}

KnnKlResult knn_kl_estimate(const RowMatrix& samples_p, const RowMatrix& samples_q, int k, const KnnOptions& opts) {
    if (samples_p.cols() != samples_q.cols()) throw InvalidArgument("knn_kl_estimate: dimension mismatch");
    if (k < 1) throw InvalidArgument("knn_kl_estimate: k must be >= 1");
    if (samples_p.rows() < 100 || samples_q.rows() < 100) throw InvalidArgument("knn_kl_estimate: need n >= 100");
    if (samples_p.rows() <= k || samples_q.rows() < k) throw InvalidArgument("knn_kl_estimate: k too large");
    KnnKlResult res;
    res.k = k;
    std::vector<double> terms;
    if (!knn_terms(samples_p, samples_q, k, terms)) {
        // Duplicate points: jitter both batches at a scale far below the data spread.
        RowMatrix pooled(samples_p.rows() + samples_q.rows(), samples_p.cols());
        pooled << samples_p, samples_q;
        const double spread = std::sqrt((pooled.rowwise() - pooled.colwise().mean()).squaredNorm() /
                                        static_cast<double>(pooled.size()));
        res.jittered = true;
        res.jitter_scale = 1e-8 * (spread > 0.0 ? spread : 1.0);
        RowMatrix p = samples_p, q = samples_q;
        add_jitter(p, res.jitter_scale, opts.seed, 0x11);
        add_jitter(q, res.jitter_scale, opts.seed, 0x22);
        if (!knn_terms(p, q, k, terms)) throw InvalidArgument("knn_kl_estimate: zero distances persist after jitter");
    }
    const double n = static_cast<double>(samples_p.rows());
    const double m = static_cast<double>(samples_q.rows());
    const double offset = std::log(m / (n - 1.0));
    res.estimate = pairwise_sum(terms) / n + offset;

    if (opts.bootstrap >= 2) {
        std::vector<double> boot(opts.bootstrap), draw(terms.size());
        for (std::size_t b = 0; b < opts.bootstrap; ++b) {
            CounterRng rng(opts.seed, 0xB007, b);
            for (auto& v : draw) v = terms[static_cast<std::size_t>(rng.uniform() * static_cast<double>(terms.size()))];
            boot[b] = pairwise_sum(draw) / n + offset;
        }
        const auto est = mean_and_error(boot);
        res.std_error = est.std_error * std::sqrt(static_cast<double>(opts.bootstrap));
        std::sort(boot.begin(), boot.end());
        const double alpha = 0.5 * (1.0 - opts.confidence);
        const auto at = [&](double q) {
            const auto i = static_cast<std::size_t>(std::clamp(q * static_cast<double>(boot.size() - 1), 0.0,
                                                                static_cast<double>(boot.size() - 1)));
            return boot[i];
        };
        res.ci_low = at(alpha);
        res.ci_high = at(1.0 - alpha);
    }
    return res;
}

RateFit fit_line(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("fit_line: need >= 2 paired values");
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (!(sxx > 0.0)) throw InvalidArgument("fit_line: x values are all equal");
    RateFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.n = x.size();
    double ss_res = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = y[i] - fit.intercept - fit.slope * x[i];
        ss_res += r * r;
    }
    fit.r_squared = syy > 0.0 ? std::clamp(1.0 - ss_res / syy, 0.0, 1.0) : 1.0;
    return fit;
}

RateFit fit_log_log(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 3) throw InvalidArgument("rate fit needs >= 3 points");
    std::vector<double> lx(x.size()), ly(y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0) || !std::isfinite(x[i])) {
            std::ostringstream msg;
            msg << "rate fit: point " << i << " has nonpositive abscissa " << x[i];
            throw InvalidArgument(msg.str());
        }
        if (!(y[i] > 0.0) || !std::isfinite(y[i])) {
            std::ostringstream msg;
            msg << "rate fit: point " << i << " has nonpositive value " << y[i]
                << " (subtract floors only where the result stays positive)";
            throw InvalidArgument(msg.str());
        }
        lx[i] = std::log(x[i]);
        ly[i] = std::log(y[i]);
    }
    return fit_line(lx, ly);
}

RateFit fit_rate_exponent(std::span<const RatePoint> points) {
    std::vector<double> ks, vs;
    for (const auto& p : points) {
        if (!(p.value > 0.0) || !std::isfinite(p.value)) {
            std::ostringstream msg;
            msg << "rate fit: point K=" << p.K << " has nonpositive value " << p.value
                << " (subtract floors only where the result stays positive)";
            throw InvalidArgument(msg.str());
        }
        ks.push_back(static_cast<double>(p.K));
        vs.push_back(p.value);
    }
    return fit_log_log(ks, vs);
}

RateFit fit_through_origin(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("fit_through_origin: need >= 2 paired values");
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    if (!(sxx > 0.0)) throw InvalidArgument("fit_through_origin: x values are all zero");
    RateFit fit;
    fit.slope = sxy / sxx;
    fit.n = x.size();
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = y[i] - fit.slope * x[i];
        ss_res += r * r;
        ss_tot += (y[i] - my) * (y[i] - my);
    }
    fit.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
    return fit;
}

}  // namespace onsl
