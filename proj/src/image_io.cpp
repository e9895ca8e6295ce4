#include "tempofuse/image_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace tempofuse {
namespace {

std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
    }
    return v;
}

std::string read_token(std::istream& in) {
    std::string tok;
    char ch;
    while (in.get(ch)) {
        if (ch == '#') {
            std::string skip;
            std::getline(in, skip);
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(ch);
    }
    return tok;
}

}  // namespace

void write_pfm(const std::filesystem::path& path, const Map& map) {
    const int ch = map.channels();
    if (ch < 1 || ch > 3) throw IoError("write_pfm: unsupported channel count " + std::to_string(ch));
    const int out_ch = ch == 1 ? 1 : 3;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << (out_ch == 1 ? "Pf" : "PF") << '\n' << map.width() << ' ' << map.height() << '\n' << "-1.0\n";
    std::vector<std::uint32_t> row(static_cast<std::size_t>(map.width()) * out_ch);
    for (int r = map.height() - 1; r >= 0; --r) {
        for (int c = 0; c < map.width(); ++c)
            for (int k = 0; k < out_ch; ++k) {
                const float f = k < ch ? static_cast<float>(map(r, c, k)) : 0.0f;
                row[static_cast<std::size_t>(c) * out_ch + k] = to_le(std::bit_cast<std::uint32_t>(f));
            }
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(std::uint32_t)));
    }
    if (!out) throw IoError("write failed: " + path.string());
}

Map read_pfm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string magic;
    std::getline(in, magic);
    int ch = 0;
    if (magic == "Pf") ch = 1;
    else if (magic == "PF") ch = 3;
    else throw IoError(path.string() + ": not a PFM file");
    std::string header;
    std::getline(in, header);
    int width = 0, height = 0;
    std::istringstream(header) >> width >> height;
    std::string scale_line;
    std::getline(in, scale_line);
    const double scale = std::stod(scale_line);
    if (width <= 0 || height <= 0) throw IoError(path.string() + ": bad PFM dimensions");
    const bool little = scale < 0;
    Map out(height, width, ch);
    std::vector<std::uint32_t> row(static_cast<std::size_t>(width) * ch);
    for (int r = height - 1; r >= 0; --r) {
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(row.size() * sizeof(std::uint32_t)));
        if (!in) throw IoError(path.string() + ": truncated PFM data");
        for (int c = 0; c < width; ++c)
            for (int k = 0; k < ch; ++k) {
                std::uint32_t bits = row[static_cast<std::size_t>(c) * ch + k];
                const bool native_little = std::endian::native == std::endian::little;
                if (little != native_little)
                    bits = ((bits & 0xffu) << 24) | ((bits & 0xff00u) << 8) | ((bits >> 8) & 0xff00u) | (bits >> 24);
                out(r, c, k) = std::bit_cast<float>(bits);
            }
    }
    return out;
}

void write_pgm(const std::filesystem::path& path, const Map& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "P5\n" << image.width() << ' ' << image.height() << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(image.width()));
    for (int r = 0; r < image.height(); ++r) {
        for (int c = 0; c < image.width(); ++c)
            row[static_cast<std::size_t>(c)] =
                static_cast<unsigned char>(std::lround(std::clamp(image(r, c), 0.0, 1.0) * 255.0));
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw IoError("write failed: " + path.string());
}

Map read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    if (read_token(in) != "P5") throw IoError(path.string() + ": not a binary PGM");
    const int width = std::stoi(read_token(in));
    const int height = std::stoi(read_token(in));
    const int maxval = std::stoi(read_token(in));
    if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255)
        throw IoError(path.string() + ": unsupported PGM header");
    Map out(height, width);
    std::vector<unsigned char> row(static_cast<std::size_t>(width));
    for (int r = 0; r < height; ++r) {
        in.read(reinterpret_cast<char*>(row.data()), width);
        if (!in) throw IoError(path.string() + ": truncated PGM data");
        for (int c = 0; c < width; ++c) out(r, c) = row[static_cast<std::size_t>(c)] / static_cast<double>(maxval);
    }
    return out;
}

}  // namespace tempofuse
