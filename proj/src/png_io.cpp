#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <regex>

#include "stablevsr/videodata.hpp"

namespace stablevsr {

namespace fs = std::filesystem;

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

std::string frame_filename(size_t index)
{
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%06zu.png", index);
    return buf;
}

Frame read_png(const fs::path& file)
{
    FilePtr fp(std::fopen(file.c_str(), "rb"));
    if (!fp)
        throw FormatError("cannot open " + file.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("corrupt PNG: " + file.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_packing(png);
    png_set_strip_alpha(png);
    const int colour = png_get_color_type(png, info);
    if (colour == PNG_COLOR_TYPE_PALETTE)
        png_set_palette_to_rgb(png);
    if (colour == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);

    const Index w = png_get_image_width(png, info);
    const Index h = png_get_image_height(png, info);
    const Index channels = png_get_channels(png, info);
    std::vector<png_byte> pixels(static_cast<size_t>(h * w * channels));
    std::vector<png_bytep> rows(h);
    for (Index y = 0; y < h; ++y)
        rows[y] = pixels.data() + y * w * channels;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);

    if (channels != 1 && channels != 3)
        throw FormatError("unsupported PNG channel count in " + file.string());
    Frame out({1, channels, h, w});
    for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x)
            for (Index c = 0; c < channels; ++c)
                out(0, c, y, x) = pixels[(y * w + x) * channels + c] / 255.0f;
    return out;
}

void write_png(const fs::path& file, const Frame& frame)
{
    const Shape s = frame.shape();
    if (s.n != 1 || (s.c != 1 && s.c != 3))
        throw ShapeError("write_png: expected a (1, 1|3, H, W) frame, got " + to_string(s));
    FilePtr fp(std::fopen(file.c_str(), "wb"));
    if (!fp)
        throw FormatError("cannot write " + file.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("libpng initialisation failed");
    }
    std::vector<png_byte> pixels(static_cast<size_t>(s.h * s.w * s.c));
    for (Index y = 0; y < s.h; ++y)
        for (Index x = 0; x < s.w; ++x)
            for (Index c = 0; c < s.c; ++c) {
                const float v = std::clamp(frame(0, c, y, x), 0.0f, 1.0f);
                pixels[(y * s.w + x) * s.c + c] = static_cast<png_byte>(std::lround(v * 255.0f));
            }
    std::vector<png_bytep> rows(s.h);
    for (Index y = 0; y < s.h; ++y)
        rows[y] = pixels.data() + y * s.w * s.c;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("failed writing " + file.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(s.w), static_cast<png_uint_32>(s.h), 8,
                 s.c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

VideoSequence read_frames(const fs::path& dir, Tier tier)
{
    if (!fs::is_directory(dir))
        throw FormatError("not a frame directory: " + dir.string());
    static const std::regex pattern(R"(frame_(\d{6})\.png)");
    std::map<long, fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::smatch m;
        const std::string name = entry.path().filename().string();
        if (std::regex_match(name, m, pattern))
            files.emplace(std::stol(m[1].str()), entry.path());
    }
    if (files.empty())
        throw FormatError("no frame_%06d.png files in " + dir.string());
    long expected = files.begin()->first;
    std::vector<Frame> frames;
    for (const auto& [index, path] : files) {
        if (index != expected)
            throw FormatError("gap in frame numbering at index " + std::to_string(expected) + " in " + dir.string());
        ++expected;
        Frame f = read_png(path);
        if (!frames.empty() && !(f.shape() == frames.front().shape()))
            throw FormatError("mixed frame sizes in " + dir.string() + " (" + path.filename().string() + ")");
        frames.push_back(std::move(f));
    }
    const ColorSpace cs = frames.front().shape().c == 1 ? ColorSpace::y : ColorSpace::rgb;
    return VideoSequence(std::move(frames), cs, tier);
}

void write_frames(const fs::path& dir, const VideoSequence& seq)
{
    fs::create_directories(dir);
    for (size_t i = 0; i < seq.size(); ++i)
        write_png(dir / frame_filename(i), seq.frames[i]);
}

}  // namespace stablevsr
