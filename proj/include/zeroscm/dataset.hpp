#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "zeroscm/scm.hpp"
#include "zeroscm/tensor.hpp"

namespace zeroscm {

struct DatasetMeta {
    uint64_t seed = 0;
    std::string preset;     // "IN" / "OUT" / ""
    std::string mechanism;  // "LIN" / "RFF" / ""
    std::string generator = "zeroscm-sim-v1";
    std::vector<double> mean, scale;  // standardization stats, empty if unset
    std::map<std::string, std::string> extra;
};

/// n x d observations plus adjacency, optional noise, and provenance.
struct Dataset {
    Tensor<double> x;
    std::optional<Tensor<double>> noise;
    Dag dag;
    bool standardized = false;
    DatasetMeta meta;

    int rows() const { return static_cast<int>(x.shape[0]); }
    int nodes() const { return static_cast<int>(x.shape[1]); }
};

// Binary layout: magic "SCMD", u16 version=1, u32 n, u16 d, u8 flags
// (bit0 noise present, bit1 standardized), d*d row-major u8 adjacency
// (row i = parents of i), X as little-endian f64 row-major, optional N
// likewise, u32-length-prefixed UTF-8 metadata (key=value lines).
void serialize_dataset(const Dataset& ds, std::ostream& out);
Dataset deserialize_dataset(std::istream& in);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

/// Per-node shift/scale fitted on a conditioning split. scale is the
/// population standard deviation clamped away from zero.
struct Standardizer {
    std::vector<double> mean, scale;

    static Standardizer fit(const Tensor<double>& x);
    static Standardizer identity(int d);

    Tensor<double> apply(const Tensor<double>& x) const;          // (x - m) / s
    Tensor<double> invert(const Tensor<double>& x) const;         // s * x + m
    Tensor<double> scale_noise(const Tensor<double>& n) const;    // n / s
    Tensor<double> unscale_noise(const Tensor<double>& n) const;  // n * s
    double standardize_value(int node, double v) const;           // (v - m_i) / s_i
};

/// Copy of `rows` consecutive rows starting at `first`.
Tensor<double> slice_rows(const Tensor<double>& x, int first, int rows);

}  // namespace zeroscm
