#include "vla/vlt_io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace vla {

namespace {

void put_u32le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

void write_vlt(const std::filesystem::path& path, const Tensor& t) {
    if (t.rank() == 0) throw std::invalid_argument("write_vlt: rank-0 tensor");
    std::string buf;
    buf.reserve(8 + 4 * t.rank() + 4 * t.size());
    buf += "VLT1";
    put_u32le(buf, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u32le(buf, static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < t.size(); ++i) {
        const float f = static_cast<float>(t[i]);
        put_u32le(buf, std::bit_cast<std::uint32_t>(f));
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("write_vlt: cannot open " + path.string());
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!os) throw std::runtime_error("write_vlt: write failed for " + path.string());
}

Tensor read_vlt(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() < 8 || std::memcmp(bytes.data(), "VLT1", 4) != 0) {
        throw std::runtime_error("read_vlt: " + path.string() + " is not a VLT1 file");
    }
    const std::uint32_t rank = get_u32le(bytes.data() + 4);
    if (rank == 0 || bytes.size() < 8 + 4ull * rank) {
        throw std::runtime_error("read_vlt: truncated header in " + path.string());
    }
    std::vector<std::size_t> shape(rank);
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        shape[i] = get_u32le(bytes.data() + 8 + 4ull * i);
        if (shape[i] == 0) throw std::runtime_error("read_vlt: zero dimension in " + path.string());
        count *= shape[i];
    }
    const std::size_t payload_off = 8 + 4ull * rank;
    if (bytes.size() != payload_off + 4ull * count) {
        throw std::runtime_error("read_vlt: payload length mismatch in " + path.string());
    }
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint32_t u = get_u32le(bytes.data() + payload_off + 4 * i);
        values[i] = static_cast<double>(std::bit_cast<float>(u));
    }
    return Tensor(std::move(shape), std::move(values));
}

Tensor quantize_f32(const Tensor& t) {
    Tensor out = t;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<double>(static_cast<float>(out[i]));
    return out;
}

void write_pgm16(const std::filesystem::path& path, const Tensor& map) {
    if (map.rank() != 2) throw std::invalid_argument("write_pgm16: expected rank-2 map");
    const std::size_t h = map.dim(0), w = map.dim(1);
    std::string buf = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n65535\n";
    buf.reserve(buf.size() + 2 * h * w);
    for (std::size_t i = 0; i < h * w; ++i) {
        long v = std::lround(map[i] * 65535.0);
        if (v < 0) v = 0;
        if (v > 65535) v = 65535;
        // 16-bit PGM samples are most-significant byte first.
        buf.push_back(static_cast<char>((v >> 8) & 0xff));
        buf.push_back(static_cast<char>(v & 0xff));
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("write_pgm16: cannot open " + path.string());
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("read_manifest: cannot open " + path.string());
    Manifest out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("read_manifest: " + path.string() + ":" +
                                     std::to_string(lineno) + ": expected `key = value`");
        }
        out.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return out;
}

void write_manifest(const std::filesystem::path& path, const Manifest& entries) {
    std::string buf;
    for (const auto& [k, v] : entries) buf += k + " = " + v + "\n";
    write_text_file(path, buf);
}

bool manifest_has(const Manifest& m, const std::string& key) {
    for (const auto& [k, v] : m)
        if (k == key) return true;
    return false;
}

const std::string& manifest_get(const Manifest& m, const std::string& key) {
    for (const auto& [k, v] : m)
        if (k == key) return v;
    throw std::runtime_error("manifest: missing key `" + key + "`");
}

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    is.seekg(0, std::ios::end);
    const std::streamsize n = is.tellg();
    is.seekg(0, std::ios::beg);
    std::vector<unsigned char> bytes(static_cast<std::size_t>(n));
    if (n > 0) is.read(reinterpret_cast<char*>(bytes.data()), n);
    if (!is) throw std::runtime_error("read failed for " + path.string());
    return bytes;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path.string());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!os) throw std::runtime_error("write failed for " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return std::string(bytes.begin(), bytes.end());
}

}  // namespace vla
