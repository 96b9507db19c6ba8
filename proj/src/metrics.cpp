#include "zeroscm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace zeroscm {

double rmse(const Tensor<double>& y, const Tensor<double>& yhat) {
    if (y.shape != yhat.shape || y.rank() != 2) throw ShapeError("rmse: shapes must match, rank 2");
    int64_t n = y.shape[0], d = y.shape[1];
    double acc = 0.0;
    for (int64_t r = 0; r < n; ++r) {
        double sq = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            double dv = y.at2(r, j) - yhat.at2(r, j);
            sq += dv * dv;
        }
        acc += std::sqrt(sq / static_cast<double>(d));
    }
    return acc / static_cast<double>(n);
}

namespace {

double sq_dist(const double* x, const double* y, int64_t d) {
    double acc = 0.0;
    for (int64_t j = 0; j < d; ++j) {
        double dv = x[j] - y[j];
        acc += dv * dv;
    }
    return acc;
}

}  // namespace

double median_pairwise_distance(const Tensor<double>& a, const Tensor<double>& b) {
    int64_t d = a.shape[1];
    int64_t na = a.shape[0], nb = b.shape[0];
    std::vector<const double*> rows;
    rows.reserve(static_cast<size_t>(na + nb));
    for (int64_t r = 0; r < na; ++r) rows.push_back(a.data.data() + r * d);
    for (int64_t r = 0; r < nb; ++r) rows.push_back(b.data.data() + r * d);
    std::vector<double> dist;
    dist.reserve(rows.size() * (rows.size() - 1) / 2);
    for (size_t i = 0; i < rows.size(); ++i)
        for (size_t j = i + 1; j < rows.size(); ++j)
            dist.push_back(std::sqrt(sq_dist(rows[i], rows[j], d)));
    if (dist.empty()) return 1.0;
    size_t mid = dist.size() / 2;
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid), dist.end());
    double med = dist[mid];
    return med > 0.0 ? med : 1.0;
}

double mmd_rbf(const Tensor<double>& a, const Tensor<double>& b, double bandwidth) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[1])
        throw ShapeError("mmd_rbf: row sets must share the column count");
    int64_t na = a.shape[0], nb = b.shape[0], d = a.shape[1];
    if (na == 0 || nb == 0) throw ShapeError("mmd_rbf: empty set");
    double sigma = bandwidth > 0.0 ? bandwidth : median_pairwise_distance(a, b);
    double gamma = 1.0 / (2.0 * sigma * sigma);
    auto kmean = [&](const Tensor<double>& x, const Tensor<double>& y) {
        double acc = 0.0;
        for (int64_t i = 0; i < x.shape[0]; ++i)
            for (int64_t j = 0; j < y.shape[0]; ++j)
                acc += std::exp(-gamma * sq_dist(x.data.data() + i * d, y.data.data() + j * d, d));
        return acc / (static_cast<double>(x.shape[0]) * static_cast<double>(y.shape[0]));
    };
    double v = kmean(a, a) + kmean(b, b) - 2.0 * kmean(a, b);
    return std::max(v, 0.0);  // biased estimator is nonnegative; clip rounding dust
}

}  // namespace zeroscm
