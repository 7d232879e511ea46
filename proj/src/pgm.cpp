#include "crg/pgm.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <vector>

#include "crg/errors.hpp"

namespace crg {

void write_pgm16(const std::string& path, const Eigen::MatrixXd& image) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f << "P5\n" << image.cols() << " " << image.rows() << "\n65535\n";
    std::vector<unsigned char> buf;
    buf.reserve(static_cast<size_t>(image.size()) * 2);
    for (Eigen::Index r = 0; r < image.rows(); ++r) {
        for (Eigen::Index c = 0; c < image.cols(); ++c) {
            double v = std::min(1.0, std::max(0.0, image(r, c)));
            auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
            buf.push_back(static_cast<unsigned char>(q >> 8));  // big-endian per format
            buf.push_back(static_cast<unsigned char>(q & 0xff));
        }
    }
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IoError("short write to " + path);
}

Eigen::MatrixXd read_pgm16(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path);
    std::string magic;
    f >> magic;
    if (magic != "P5") throw IoError(path + ": not a binary PGM");
    long w = 0, h = 0, maxval = 0;
    f >> w >> h >> maxval;
    if (w <= 0 || h <= 0 || maxval != 65535)
        throw IoError(path + ": expected 16-bit PGM header");
    f.get();  // single whitespace after header
    std::vector<unsigned char> buf(static_cast<size_t>(w) * static_cast<size_t>(h) * 2);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (f.gcount() != static_cast<std::streamsize>(buf.size()))
        throw IoError(path + ": truncated pixel data");
    Eigen::MatrixXd img(h, w);
    size_t k = 0;
    for (long r = 0; r < h; ++r)
        for (long c = 0; c < w; ++c) {
            std::uint16_t q = static_cast<std::uint16_t>((buf[k] << 8) | buf[k + 1]);
            k += 2;
            img(r, c) = static_cast<double>(q) / 65535.0;
        }
    return img;
}

}  // namespace crg
