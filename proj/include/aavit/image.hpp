#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "aavit/errors.hpp"
#include "aavit/tensor.hpp"

// Binary PPM (P6, maxval 255) reader/writer. PPM keeps the on-disk format
// bit-exact and codec-free; pixel values map to floats as v/255 in [0,1],
// row-major with the channel innermost.

namespace aavit {

namespace detail {

class PpmParser {
public:
    explicit PpmParser(std::vector<char> bytes, std::string name)
        : bytes_(std::move(bytes)), name_(std::move(name)) {}

    // Header tokens are separated by whitespace; '#' starts a comment that
    // runs to end of line.
    std::string token() {
        skip_space_and_comments();
        const std::size_t start = pos_;
        while (pos_ < bytes_.size() && !is_space(bytes_[pos_])) ++pos_;
        if (start == pos_) fail("expected header token");
        return std::string(bytes_.data() + start, pos_ - start);
    }

    unsigned number(const char* what) {
        const std::size_t at = pos_;
        const std::string t = token();
        unsigned v = 0;
        for (char c : t) {
            if (c < '0' || c > '9') {
                fail_at(std::string("bad ") + what + " '" + t + "'", at);
            }
            v = v * 10 + static_cast<unsigned>(c - '0');
        }
        return v;
    }

    void one_whitespace() {
        if (pos_ >= bytes_.size() || !is_space(bytes_[pos_])) {
            fail("expected single whitespace before pixel data");
        }
        ++pos_;
    }

    const unsigned char* payload(std::size_t need) {
        if (bytes_.size() - pos_ < need) {
            fail("pixel payload truncated: need " + std::to_string(need) + " bytes, have " +
                 std::to_string(bytes_.size() - pos_));
        }
        return reinterpret_cast<const unsigned char*>(bytes_.data() + pos_);
    }

    std::size_t offset() const { return pos_; }

    [[noreturn]] void fail(const std::string& msg) const { fail_at(msg, pos_); }
    [[noreturn]] void fail_at(const std::string& msg, std::size_t at) const {
        throw data_error(name_ + ": " + msg + " (offset " + std::to_string(at) + ")");
    }

private:
    static bool is_space(char c) {
        return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
    }
    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (is_space(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    std::vector<char> bytes_;
    std::string name_;
    std::size_t pos_ = 0;
};

}  // namespace detail

/// Reads a P6 PPM into an [H x W x 3] tensor with values v/255.
inline Tensor<float> load_ppm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw data_error("cannot open image " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(is)),
                            std::istreambuf_iterator<char>());
    detail::PpmParser p(std::move(bytes), path.string());
    if (p.token() != "P6") p.fail_at("not a binary PPM (expected magic P6)", 0);
    const unsigned w = p.number("width");
    const unsigned h = p.number("height");
    const unsigned maxval = p.number("maxval");
    if (maxval != 255) p.fail("unsupported maxval " + std::to_string(maxval));
    p.one_whitespace();
    if (w == 0 || h == 0) p.fail("degenerate image size");
    const std::size_t need = static_cast<std::size_t>(w) * h * 3;
    const unsigned char* data = p.payload(need);
    std::vector<float> out(need);
    for (std::size_t i = 0; i < need; ++i) out[i] = static_cast<float>(data[i]) / 255.0f;
    return Tensor<float>::from_data({h, w, 3}, std::move(out));
}

/// Writes an [H x W x 3] tensor as P6, quantizing with round(clamp01(v)*255).
/// Loading a PPM and saving it again reproduces the file byte for byte.
inline void save_ppm(const std::filesystem::path& path, const Tensor<float>& image) {
    if (image.rank() != 3 || image.dim(2) != 3) {
        throw shape_error("save_ppm: expected [H x W x 3], got " + shape_str(image.shape()));
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw data_error("cannot write image " + path.string());
    os << "P6\n" << image.dim(1) << " " << image.dim(0) << "\n255\n";
    std::vector<unsigned char> bytes(image.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        const float v = std::min(1.0f, std::max(0.0f, image.value()[i]));
        bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
    if (!os) throw data_error("short write to image " + path.string());
}

}  // namespace aavit
