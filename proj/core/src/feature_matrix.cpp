#include "recgoat/feature_matrix.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace recgoat {

namespace {

constexpr char kMagic[4] = {'R', 'G', 'F', '1'};

std::uint32_t read_u32le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void write_u32le(std::ofstream& out, std::uint32_t v) {
    unsigned char buf[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                            static_cast<unsigned char>((v >> 16) & 0xff),
                            static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(buf), 4);
}

}  // namespace

Eigen::MatrixXd FeatureMatrix::to_dense() const {
    Eigen::MatrixXd m(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
        for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = at(r, c);
    return m;
}

FeatureMatrix FeatureMatrix::from_dense(const Eigen::MatrixXd& m, EntityKind kind) {
    FeatureMatrix out;
    out.rows = static_cast<std::uint32_t>(m.rows());
    out.cols = static_cast<std::uint32_t>(m.cols());
    out.entity_kind = kind;
    out.data.resize(static_cast<std::size_t>(out.rows) * out.cols);
    for (std::uint32_t r = 0; r < out.rows; ++r)
        for (std::uint32_t c = 0; c < out.cols; ++c) out.at(r, c) = static_cast<float>(m(r, c));
    return out;
}

FeatureMatrix load_feature_matrix(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open feature file: " + path);
    unsigned char header[12];
    in.read(reinterpret_cast<char*>(header), 12);
    if (in.gcount() != 12) throw std::runtime_error("feature file too short for RGF1 header: " + path);
    if (std::memcmp(header, kMagic, 4) != 0) throw std::runtime_error("bad magic, not an RGF1 file: " + path);

    FeatureMatrix m;
    m.rows = read_u32le(header + 4);
    m.cols = read_u32le(header + 8);
    const std::size_t count = static_cast<std::size_t>(m.rows) * m.cols;
    m.data.resize(count);
    in.read(reinterpret_cast<char*>(m.data.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != count * sizeof(float))
        throw std::runtime_error("RGF1 payload size mismatch (header says " + std::to_string(m.rows) + "x" +
                                 std::to_string(m.cols) + "): " + path);
    char extra;
    if (in.read(&extra, 1))
        throw std::runtime_error("RGF1 payload size mismatch (trailing bytes): " + path);
    for (float v : m.data)
        if (!std::isfinite(v)) throw std::runtime_error("non-finite value in feature file: " + path);
    return m;
}

void save_feature_matrix(const FeatureMatrix& m, const std::string& path) {
    if (m.data.size() != static_cast<std::size_t>(m.rows) * m.cols)
        throw std::runtime_error("feature matrix data length does not match rows*cols");
    for (float v : m.data)
        if (!std::isfinite(v)) throw std::runtime_error("refusing to save non-finite feature matrix");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    out.write(kMagic, 4);
    write_u32le(out, m.rows);
    write_u32le(out, m.cols);
    out.write(reinterpret_cast<const char*>(m.data.data()),
              static_cast<std::streamsize>(m.data.size() * sizeof(float)));
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace recgoat
