#include "zeroscm/dataset.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace zeroscm {

namespace {

constexpr char kMagic[4] = {'S', 'C', 'M', 'D'};
constexpr uint16_t kVersion = 1;

template <typename T>
void write_le(std::ostream& out, T v) {
    // host is little-endian on every supported target; byte order asserted in tests
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw DataError("dataset: truncated payload");
    return v;
}

std::string join_doubles(const std::vector<double>& v) {
    std::ostringstream os;
    os.precision(17);
    for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    return os.str();
}

std::vector<double> split_doubles(const std::string& s) {
    std::vector<double> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        if (!tok.empty()) out.push_back(std::stod(tok));
    }
    return out;
}

std::string meta_to_text(const DatasetMeta& m) {
    std::ostringstream os;
    os << "seed=" << m.seed << "\n";
    if (!m.preset.empty()) os << "preset=" << m.preset << "\n";
    if (!m.mechanism.empty()) os << "mechanism=" << m.mechanism << "\n";
    if (!m.generator.empty()) os << "generator=" << m.generator << "\n";
    if (!m.mean.empty()) os << "mean=" << join_doubles(m.mean) << "\n";
    if (!m.scale.empty()) os << "scale=" << join_doubles(m.scale) << "\n";
    for (const auto& kv : m.extra) os << kv.first << "=" << kv.second << "\n";
    return os.str();
}

DatasetMeta meta_from_text(const std::string& text) {
    DatasetMeta m;
    m.generator.clear();
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        if (key == "seed")
            m.seed = std::stoull(val);
        else if (key == "preset")
            m.preset = val;
        else if (key == "mechanism")
            m.mechanism = val;
        else if (key == "generator")
            m.generator = val;
        else if (key == "mean")
            m.mean = split_doubles(val);
        else if (key == "scale")
            m.scale = split_doubles(val);
        else
            m.extra[key] = val;
    }
    return m;
}

}  // namespace

void serialize_dataset(const Dataset& ds, std::ostream& out) {
    if (ds.x.rank() != 2) throw ShapeError("serialize_dataset: X must be rank-2");
    int64_t n = ds.x.shape[0], d = ds.x.shape[1];
    if (ds.dag.d != d) throw ShapeError("serialize_dataset: graph size != column count");
    if (ds.noise && ds.noise->shape != ds.x.shape)
        throw ShapeError("serialize_dataset: noise shape differs from X");
    out.write(kMagic, 4);
    write_le<uint16_t>(out, kVersion);
    write_le<uint32_t>(out, static_cast<uint32_t>(n));
    write_le<uint16_t>(out, static_cast<uint16_t>(d));
    uint8_t flags = (ds.noise ? 1 : 0) | (ds.standardized ? 2 : 0);
    write_le<uint8_t>(out, flags);
    out.write(reinterpret_cast<const char*>(ds.dag.adj.data()),
              static_cast<std::streamsize>(ds.dag.adj.size()));
    out.write(reinterpret_cast<const char*>(ds.x.data.data()),
              static_cast<std::streamsize>(ds.x.data.size() * sizeof(double)));
    if (ds.noise)
        out.write(reinterpret_cast<const char*>(ds.noise->data.data()),
                  static_cast<std::streamsize>(ds.noise->data.size() * sizeof(double)));
    std::string meta = meta_to_text(ds.meta);
    write_le<uint32_t>(out, static_cast<uint32_t>(meta.size()));
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    if (!out) throw DataError("serialize_dataset: write failed");
}

Dataset deserialize_dataset(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("dataset: bad magic");
    uint16_t version = read_le<uint16_t>(in);
    if (version != kVersion)
        throw DataError("dataset: unsupported version " + std::to_string(version));
    uint32_t n = read_le<uint32_t>(in);
    uint16_t d = read_le<uint16_t>(in);
    uint8_t flags = read_le<uint8_t>(in);
    if (n == 0 || d == 0) throw DataError("dataset: empty dimensions");
    Dataset ds;
    ds.dag = Dag(static_cast<int>(d));
    in.read(reinterpret_cast<char*>(ds.dag.adj.data()),
            static_cast<std::streamsize>(ds.dag.adj.size()));
    if (!in) throw DataError("dataset: truncated adjacency");
    topological_order(ds.dag);  // rejects cycles on load
    ds.x = Tensor<double>({static_cast<int64_t>(n), static_cast<int64_t>(d)});
    in.read(reinterpret_cast<char*>(ds.x.data.data()),
            static_cast<std::streamsize>(ds.x.data.size() * sizeof(double)));
    if (!in) throw DataError("dataset: truncated observations");
    if ((flags & 1) != 0) {
        Tensor<double> noise({static_cast<int64_t>(n), static_cast<int64_t>(d)});
        in.read(reinterpret_cast<char*>(noise.data.data()),
                static_cast<std::streamsize>(noise.data.size() * sizeof(double)));
        if (!in) throw DataError("dataset: truncated noise");
        ds.noise = std::move(noise);
    }
    ds.standardized = (flags & 2) != 0;
    uint32_t meta_len = read_le<uint32_t>(in);
    std::string meta(meta_len, '\0');
    in.read(meta.data(), meta_len);
    if (!in) throw DataError("dataset: truncated metadata");
    ds.meta = meta_from_text(meta);
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    serialize_dataset(ds, out);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    return deserialize_dataset(in);
}

Standardizer Standardizer::fit(const Tensor<double>& x) {
    int64_t n = x.shape[0], d = x.shape[1];
    Standardizer s;
    s.mean.assign(static_cast<size_t>(d), 0.0);
    s.scale.assign(static_cast<size_t>(d), 1.0);
    for (int64_t j = 0; j < d; ++j) {
        double m = 0;
        for (int64_t r = 0; r < n; ++r) m += x.at2(r, j);
        m /= static_cast<double>(n);
        double var = 0;
        for (int64_t r = 0; r < n; ++r) {
            double dv = x.at2(r, j) - m;
            var += dv * dv;
        }
        var /= static_cast<double>(n);
        s.mean[static_cast<size_t>(j)] = m;
        s.scale[static_cast<size_t>(j)] = std::max(std::sqrt(var), 1e-12);
    }
    return s;
}

Standardizer Standardizer::identity(int d) {
    Standardizer s;
    s.mean.assign(static_cast<size_t>(d), 0.0);
    s.scale.assign(static_cast<size_t>(d), 1.0);
    return s;
}

Tensor<double> Standardizer::apply(const Tensor<double>& x) const {
    Tensor<double> out = x;
    int64_t n = x.shape[0], d = x.shape[1];
    for (int64_t r = 0; r < n; ++r)
        for (int64_t j = 0; j < d; ++j)
            out.at2(r, j) = (x.at2(r, j) - mean[static_cast<size_t>(j)]) / scale[static_cast<size_t>(j)];
    return out;
}

Tensor<double> Standardizer::invert(const Tensor<double>& x) const {
    Tensor<double> out = x;
    int64_t n = x.shape[0], d = x.shape[1];
    for (int64_t r = 0; r < n; ++r)
        for (int64_t j = 0; j < d; ++j)
            out.at2(r, j) = x.at2(r, j) * scale[static_cast<size_t>(j)] + mean[static_cast<size_t>(j)];
    return out;
}

Tensor<double> Standardizer::scale_noise(const Tensor<double>& n) const {
    Tensor<double> out = n;
    int64_t rows = n.shape[0], d = n.shape[1];
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < d; ++j) out.at2(r, j) = n.at2(r, j) / scale[static_cast<size_t>(j)];
    return out;
}

Tensor<double> Standardizer::unscale_noise(const Tensor<double>& n) const {
    Tensor<double> out = n;
    int64_t rows = n.shape[0], d = n.shape[1];
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < d; ++j) out.at2(r, j) = n.at2(r, j) * scale[static_cast<size_t>(j)];
    return out;
}

double Standardizer::standardize_value(int node, double v) const {
    return (v - mean[static_cast<size_t>(node)]) / scale[static_cast<size_t>(node)];
}

Tensor<double> slice_rows(const Tensor<double>& x, int first, int rows) {
    int64_t d = x.shape[1];
    if (first < 0 || first + rows > x.shape[0]) throw ShapeError("slice_rows out of range");
    Tensor<double> out({rows, d});
    std::memcpy(out.data.data(), x.data.data() + static_cast<size_t>(first) * d,
                static_cast<size_t>(rows) * d * sizeof(double));
    return out;
}

}  // namespace zeroscm
