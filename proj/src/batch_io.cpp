#include "onsl/batch_io.hpp"

#include "onsl/hash.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace onsl {
namespace {

constexpr std::array<char, 4> kMagic{'O', 'N', 'S', 'L'};
constexpr std::uint16_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "binary batch format assumes a little-endian host");

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ConfigError("truncated binary batch");
    return v;
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void write_batch_csv(const std::filesystem::path& path, const SampleBatch& batch) {
    std::ofstream os(path);
    if (!os) throw Error("cannot open " + path.string() + " for writing");
    os << "# t1=" << fmt17(batch.at_time) << "\n# config_hash=" << hex64(batch.config_hash) << "\n";
    for (Eigen::Index j = 0; j < batch.points.cols(); ++j) os << (j ? "," : "") << 'x' << j;
    os << '\n';
    std::string line;
    for (Eigen::Index i = 0; i < batch.points.rows(); ++i) {
        line.clear();
        for (Eigen::Index j = 0; j < batch.points.cols(); ++j) {
            if (j) line += ',';
            line += fmt17(batch.points(i, j));
        }
        line += '\n';
        os << line;
    }
    if (!os) throw Error("write failed: " + path.string());
}

SampleBatch read_batch_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open " + path.string());
    SampleBatch batch;
    batch.at_time = std::numeric_limits<double>::quiet_NaN();
    std::string line;
    std::vector<double> values;
    Eigen::Index d = -1, n = 0;
    bool header_seen = false;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (line.rfind("# t1=", 0) == 0) batch.at_time = std::stod(line.substr(5));
            if (line.rfind("# config_hash=", 0) == 0) batch.config_hash = std::stoull(line.substr(14), nullptr, 16);
            continue;
        }
        if (!header_seen) {
            header_seen = true;
            d = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ',') + 1);
            continue;
        }
        std::stringstream ss(line);
        std::string cell;
        Eigen::Index cols = 0;
        while (std::getline(ss, cell, ',')) {
            try {
                values.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw ConfigError("malformed value '" + cell + "' in " + path.string());
            }
            ++cols;
        }
        if (cols != d) throw ConfigError("row " + std::to_string(n + 1) + " of " + path.string() + " has wrong width");
        ++n;
    }
    if (d < 1) throw ConfigError("missing column header in " + path.string());
    batch.points = Eigen::Map<RowMatrix>(values.data(), n, d);
    return batch;
}

void write_batch_binary(const std::filesystem::path& path, const SampleBatch& batch) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open " + path.string() + " for writing");
    os.write(kMagic.data(), kMagic.size());
    put<std::uint16_t>(os, kVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(batch.points.cols()));
    put<std::uint64_t>(os, static_cast<std::uint64_t>(batch.points.rows()));
    os.write(reinterpret_cast<const char*>(batch.points.data()),
             static_cast<std::streamsize>(batch.points.size() * sizeof(double)));
    if (!os) throw Error("write failed: " + path.string());
}

SampleBatch read_batch_binary(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open " + path.string());
    std::array<char, 4> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kMagic) throw ConfigError("not an ONSL batch file");
    if (get<std::uint16_t>(is) != kVersion) throw ConfigError("unsupported ONSL batch version");
    const auto d = get<std::uint32_t>(is);
    const auto n = get<std::uint64_t>(is);
    SampleBatch batch;
    batch.at_time = std::numeric_limits<double>::quiet_NaN();
    batch.points.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    if (!is.read(reinterpret_cast<char*>(batch.points.data()),
                 static_cast<std::streamsize>(batch.points.size() * sizeof(double))))
        throw ConfigError("truncated binary batch");
    return batch;
}

}  // namespace onsl
