#include "lda/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "lda/errors.hpp"

namespace lda {

void write_pgm(const std::filesystem::path& path, const Tensor& img, int bits) {
    if (img.channels() != 1) throw std::invalid_argument("write_pgm: single channel only");
    if (bits != 8 && bits != 16) throw std::invalid_argument("write_pgm: bits must be 8 or 16");
    const int maxval = bits == 8 ? 255 : 65535;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f << "P5\n" << img.width() << " " << img.height() << "\n" << maxval << "\n";
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            const double v = std::clamp(img(y, x), 0.0, 1.0);
            const long q = std::lround(v * maxval);
            if (bits == 8) {
                const unsigned char b = static_cast<unsigned char>(q);
                f.write(reinterpret_cast<const char*>(&b), 1);
            } else {
                const unsigned char b[2] = {static_cast<unsigned char>(q >> 8),
                                            static_cast<unsigned char>(q & 0xFF)};
                f.write(reinterpret_cast<const char*>(b), 2);
            }
        }
    }
    if (!f) throw IoError("write failed: " + path.string());
}

namespace {

int next_pgm_token(std::istream& in) {
    // Skips whitespace and '#' comment lines between header tokens.
    while (in) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    int value = -1;
    in >> value;
    return value;
}

}  // namespace

Tensor read_pgm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for reading: " + path.string());
    char magic[2] = {0, 0};
    f.read(magic, 2);
    if (magic[0] != 'P' || magic[1] != '5') throw IoError("not a binary PGM: " + path.string());
    const int w = next_pgm_token(f);
    const int h = next_pgm_token(f);
    const int maxval = next_pgm_token(f);
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535)
        throw IoError("bad PGM header: " + path.string());
    f.get();  // single whitespace after maxval
    Tensor img(h, w, 1);
    const int bytes = maxval > 255 ? 2 : 1;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            unsigned char b[2];
            f.read(reinterpret_cast<char*>(b), bytes);
            if (!f) throw IoError("truncated PGM: " + path.string());
            const int q = bytes == 1 ? b[0] : (b[0] << 8) | b[1];
            img(y, x) = static_cast<double>(q) / maxval;
        }
    }
    return img;
}

}  // namespace lda
