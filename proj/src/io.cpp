#include "isocaps/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "isocaps/error.hpp"
#include "isocaps/graph_data.hpp"

namespace isocaps {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

bool parse_long(const std::string& s, long long& out) {
    if (s.empty()) return false;
    char* end = nullptr;
    out = std::strtoll(s.c_str(), &end, 10);
    return *end == '\0';
}

bool parse_real(const std::string& s, double& out) {
    if (s.empty()) return false;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return *end == '\0' && std::isfinite(out);
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
    out.flush();
    if (!out) throw Error(ErrorKind::IoFailure, "write failed for " + path.string());
}

const char* kConfigKeys[] = {"n", "k", "channels", "capsule_dim", "routing_iterations", "gamma", "mode", "ablation"};

}  // namespace

void save_model(const Model& model, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
    const ModelConfig& c = model.config();
    char buf[64];
    out << kModelMagic << '\n' << "version " << kModelFormatVersion << '\n';
    out << "n=" << c.n << '\n' << "k=" << c.k << '\n' << "channels=" << c.channels << '\n';
    out << "capsule_dim=" << c.digit_dim() << '\n' << "routing_iterations=" << c.routing_iterations << '\n';
    const auto gamma_end = std::to_chars(buf, buf + sizeof buf, c.gamma).ptr;
    out << "gamma=" << std::string(buf, gamma_end) << '\n' << "mode=" << to_string(c.mode) << '\n';
    out << "ablation=" << to_string(c.ablation) << '\n';

    std::size_t count = 0;
    model.params().for_each([&](const std::string&, const auto&, bool) { ++count; });
    out << "tensors " << count << '\n';
    model.params().for_each([&](const std::string& name, const auto& t, bool) {
        const Eigen::Index rows = t.rows(), cols = t.cols();
        out << "tensor " << name << ' ' << rows << ' ' << cols << '\n';
        // Eigen storage is column-major; write rows for readability.
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index col = 0; col < cols; ++col) {
                std::snprintf(buf, sizeof buf, "%.17g", t(r, col));
                if (col) out << ' ';
                out << buf;
            }
            out << '\n';
        }
    });
    out << "end\n";
    finish(out, path);
}

Model load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + path.string());
    auto bad = [&](const std::string& why) { return Error(ErrorKind::ModelFormatError, path.string() + ": " + why); };

    std::string line;
    if (!std::getline(in, line) || trim(line) != kModelMagic) throw bad("missing ISOCAPS1 magic");
    if (!std::getline(in, line) || trim(line) != "version " + std::to_string(kModelFormatVersion))
        throw bad("unsupported format version");

    std::map<std::string, std::string> kv;
    for (const char* key : kConfigKeys) {
        if (!std::getline(in, line)) throw bad("truncated header");
        const auto eq = line.find('=');
        if (eq == std::string::npos || trim(line.substr(0, eq)) != key) throw bad(std::string("expected key ") + key);
        kv[key] = trim(line.substr(eq + 1));
    }

    ModelConfig config;
    long long v = 0;
    auto int_field = [&](const char* key) {
        if (!parse_long(kv[key], v) || v < 0 || v > 4096) throw bad(std::string("bad value for ") + key);
        return static_cast<int>(v);
    };
    config.n = int_field("n");
    config.k = int_field("k");
    config.channels = int_field("channels");
    config.capsule_dim = int_field("capsule_dim");
    config.routing_iterations = int_field("routing_iterations");
    if (!parse_real(kv["gamma"], config.gamma)) throw bad("bad value for gamma");
    try {
        config.mode = parse_match_mode(kv["mode"]);
        config.ablation = parse_ablation(kv["ablation"]);
        config.validate();
    } catch (const Error& e) {
        throw bad(std::string("invalid architecture: ") + e.what());
    }

    // The stored architecture fixes every tensor name and shape.
    ModelParams params = ModelParams::init(config, 0);
    std::size_t expected = 0;
    params.for_each([&](const std::string&, auto&, bool) { ++expected; });
    std::string word;
    std::size_t count = 0;
    if (!(in >> word >> count) || word != "tensors" || count != expected) throw bad("tensor count mismatch");

    params.for_each([&](const std::string& name, auto& t, bool) {
        std::string tag, stored;
        long long rows = 0, cols = 0;
        if (!(in >> tag >> stored >> rows >> cols) || tag != "tensor") throw bad("expected tensor header for " + name);
        if (stored != name) throw bad("expected tensor " + name + ", found " + stored);
        if (rows != t.rows() || cols != t.cols())
            throw bad("tensor " + name + " has shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                      ", expected " + std::to_string(t.rows()) + "x" + std::to_string(t.cols()));
        for (Eigen::Index r = 0; r < t.rows(); ++r)
            for (Eigen::Index c = 0; c < t.cols(); ++c) {
                std::string tok;
                double x = 0;
                if (!(in >> tok) || !parse_real(tok, x)) throw bad("bad or missing value in tensor " + name);
                t(r, c) = x;
            }
    });
    if (!(in >> word) || word != "end") throw bad("missing end marker");
    if (in >> word) throw bad("trailing content after end marker");
    for (const auto& t : params.bank.templates)
        if (max_asymmetry(t) > kSymmetryTolerance) throw bad("template is not symmetric");
    return Model(config, std::move(params));
}

void write_matrix_text(const Mat& m, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
    char buf[32];
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            std::snprintf(buf, sizeof buf, "%.9f", m(r, c));
            if (c) out << ' ';
            out << buf;
        }
        out << '\n';
    }
    finish(out, path);
}

Mat read_matrix_text(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + path.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::vector<double> row;
        std::string tok;
        double x = 0;
        while (ls >> tok) {
            if (!parse_real(tok, x)) throw Error(ErrorKind::MalformedFile, "bad number '" + tok + "' in " + path.string());
            row.push_back(x);
        }
        if (row.empty()) continue;
        if (!rows.empty() && row.size() != rows.front().size())
            throw Error(ErrorKind::MalformedFile, "ragged rows in " + path.string());
        rows.push_back(std::move(row));
    }
    Mat m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    return m;
}

unsigned char pgm_level(double value) {
    const double clipped = std::clamp(value, -1.0, 1.0);
    return static_cast<unsigned char>(std::lround((clipped + 1.0) * 127.5));
}

void write_pgm(const Mat& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
    out << "P5\n" << m.cols() << ' ' << m.rows() << "\n255\n";
    std::vector<char> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = static_cast<char>(pgm_level(m(r, c)));
        out.write(row.data(), static_cast<std::streamsize>(row.size()));
    }
    finish(out, path);
}

std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + path.string());
    std::map<std::string, std::string> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos || trim(t.substr(0, eq)).empty())
            throw Error(ErrorKind::BadConfig, path.string() + ":" + std::to_string(line_no) + ": expected key=value");
        out[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
    }
    return out;
}

void write_key_values(const std::map<std::string, std::string>& values, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
    for (const auto& [key, value] : values) out << key << '=' << value << '\n';
    finish(out, path);
}

}  // namespace isocaps
