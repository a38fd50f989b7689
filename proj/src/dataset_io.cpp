#include "mixfit/dataset_io.hpp"

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <vector>

namespace mixfit {

namespace {

constexpr char kMagic[8] = {'M', 'I', 'X', 'D', 'A', 'T', 'A', '1'};

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open file: " + path);
    return in;
}

}  // namespace

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_dataset_text(const Dataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open file for writing: " + path);
    out << "n=" << data.rows() << " d=" << data.dim() << "\n";
    for (Eigen::Index t = 0; t < data.rows(); ++t) {
        for (int i = 0; i < data.dim(); ++i) {
            if (i) out << ' ';
            out << format_double(data.points(t, i));
        }
        out << '\n';
    }
}

void write_dataset_binary(const Dataset& data, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open file for writing: " + path);
    const std::uint32_t n = static_cast<std::uint32_t>(data.rows());
    const std::uint32_t d = static_cast<std::uint32_t>(data.dim());
    out.write(kMagic, 8);
    out.write(reinterpret_cast<const char*>(&n), 4);
    out.write(reinterpret_cast<const char*>(&d), 4);
    std::vector<double> row(d);
    for (Eigen::Index t = 0; t < data.rows(); ++t) {
        for (std::uint32_t i = 0; i < d; ++i) row[i] = data.points(t, i);
        out.write(reinterpret_cast<const char*>(row.data()), 8 * d);
    }
}

namespace {

Dataset read_dataset_binary(std::ifstream& in, const std::string& path) {
    std::uint32_t n = 0, d = 0;
    in.read(reinterpret_cast<char*>(&n), 4);
    in.read(reinterpret_cast<char*>(&d), 4);
    if (!in) throw ParseError(path + ": truncated binary header", 8);
    if (n == 0 || d == 0) throw ParseError(path + ": zero rows or columns in header", 8);
    Eigen::MatrixXd points(n, d);
    std::vector<double> row(d);
    for (std::uint32_t t = 0; t < n; ++t) {
        in.read(reinterpret_cast<char*>(row.data()), 8 * d);
        if (!in)
            throw ParseError(path + ": truncated binary payload at row " + std::to_string(t),
                             16 + static_cast<std::size_t>(t) * 8 * d);
        for (std::uint32_t i = 0; i < d; ++i) points(t, i) = row[i];
    }
    return Dataset(std::move(points));
}

Dataset read_dataset_text(const std::string& path) {
    std::ifstream in(path);
    std::string header;
    if (!std::getline(in, header)) throw ParseError(path + ": missing header line");
    Eigen::Index n = 0;
    int d = 0;
    if (std::sscanf(header.c_str(), "n=%ld d=%d", &n, &d) != 2)
        throw ParseError(path + ": header must be 'n=<N> d=<d>'");
    if (n < 1 || d < 1) throw ParseError(path + ": non-positive n or d in header");
    Eigen::MatrixXd points(n, d);
    for (Eigen::Index t = 0; t < n; ++t)
        for (int i = 0; i < d; ++i)
            if (!(in >> points(t, i)))
                throw ParseError(path + ": failed to read value at row " + std::to_string(t) +
                                 ", column " + std::to_string(i));
    return Dataset(std::move(points));
}

}  // namespace

Dataset read_dataset(const std::string& path) {
    {
        std::ifstream in = open_input(path);
        char magic[8] = {};
        in.read(magic, 8);
        if (in && std::memcmp(magic, kMagic, 8) == 0) return read_dataset_binary(in, path);
        if (in && magic[0] == 0 && magic[1] == 0 &&
            static_cast<unsigned char>(magic[2]) == 0x08)
            return ingest_idx(path);
    }
    return read_dataset_text(path);
}

Dataset ingest_idx(const std::string& path) {
    std::ifstream in = open_input(path);
    std::array<unsigned char, 4> magic{};
    in.read(reinterpret_cast<char*>(magic.data()), 4);
    if (!in) throw ParseError(path + ": file shorter than the 4-byte IDX magic", 0);
    if (magic[0] != 0 || magic[1] != 0)
        throw ParseError(path + ": bad IDX magic (first two bytes must be zero)",
                         magic[0] != 0 ? 0 : 1);
    if (magic[2] != 0x08)
        throw ParseError(path + ": unsupported IDX element type 0x" +
                             [&] {
                                 char b[8];
                                 std::snprintf(b, sizeof(b), "%02x", magic[2]);
                                 return std::string(b);
                             }() +
                             " (only unsigned byte 0x08)",
                         2);
    const int ndim = magic[3];
    if (ndim < 1 || ndim > 3)
        throw ParseError(path + ": unsupported IDX rank " + std::to_string(ndim), 3);

    std::vector<std::uint32_t> dims(ndim);
    for (int i = 0; i < ndim; ++i) {
        std::array<unsigned char, 4> b{};
        in.read(reinterpret_cast<char*>(b.data()), 4);
        if (!in) throw ParseError(path + ": truncated IDX dimension header", 4 + 4 * i);
        dims[i] = (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
                  (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
        if (dims[i] == 0) throw ParseError(path + ": zero IDX dimension", 4 + 4 * i);
    }

    const std::size_t header = 4 + 4 * static_cast<std::size_t>(ndim);
    const Eigen::Index n = dims[0];
    std::size_t cols = 1;
    for (int i = 1; i < ndim; ++i) cols *= dims[i];

    std::vector<unsigned char> payload(static_cast<std::size_t>(n) * cols);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (static_cast<std::size_t>(in.gcount()) != payload.size())
        throw ParseError(path + ": truncated IDX payload, expected " +
                             std::to_string(payload.size()) + " bytes",
                         header + static_cast<std::size_t>(in.gcount()));

    Eigen::MatrixXd points(n, static_cast<Eigen::Index>(cols));
    for (Eigen::Index t = 0; t < n; ++t)
        for (std::size_t i = 0; i < cols; ++i)
            points(t, static_cast<Eigen::Index>(i)) =
                payload[static_cast<std::size_t>(t) * cols + i] / 255.0;
    return Dataset(std::move(points));
}

nlohmann::json model_to_json(const MixtureModel& model) {
    nlohmann::json j;
    j["weights"] = std::vector<double>(model.weights.data(),
                                       model.weights.data() + model.weights.size());
    j["components"] = nlohmann::json::array();
    for (const auto& comp : model.components) {
        nlohmann::json c;
        c["mean"] = std::vector<double>(comp.mean.data(), comp.mean.data() + comp.mean.size());
        std::vector<std::vector<double>> cov(comp.dim(), std::vector<double>(comp.dim()));
        for (int r = 0; r < comp.dim(); ++r)
            for (int col = 0; col < comp.dim(); ++col) cov[r][col] = comp.covariance(r, col);
        c["covariance"] = cov;
        j["components"].push_back(std::move(c));
    }
    return j;
}

MixtureModel model_from_json(const nlohmann::json& j) {
    MixtureModel model;
    const auto weights = j.at("weights").get<std::vector<double>>();
    model.weights = Eigen::Map<const Eigen::VectorXd>(weights.data(), weights.size());
    for (const auto& c : j.at("components")) {
        GaussianComponent comp;
        const auto mean = c.at("mean").get<std::vector<double>>();
        comp.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), mean.size());
        const auto cov = c.at("covariance").get<std::vector<std::vector<double>>>();
        comp.covariance.resize(cov.size(), cov.size());
        for (std::size_t r = 0; r < cov.size(); ++r) {
            if (cov[r].size() != cov.size())
                throw ParseError("model json: covariance is not square");
            for (std::size_t col = 0; col < cov.size(); ++col)
                comp.covariance(r, col) = cov[r][col];
        }
        model.components.push_back(std::move(comp));
    }
    model.validate();
    return model;
}

void write_model_json(const MixtureModel& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open file for writing: " + path);
    out << model_to_json(model).dump(2) << "\n";
}

MixtureModel read_model_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open file: " + path);
    nlohmann::json j;
    in >> j;
    return model_from_json(j);
}

}  // namespace mixfit
