#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <png.h>

#include "ppinet/dataset.hpp"
#include "ppinet/errors.hpp"
#include "ppinet/handdraw.hpp"

namespace ppinet {

/// 8-bit grayscale PNG bytes for a raster image.
inline std::string encode_png(const RasterImage& img) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = kImageSize;
    image.height = kImageSize;
    image.format = PNG_FORMAT_GRAY;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.pixels.data(), 0, nullptr))
        throw IoError(std::string("png: ") + image.message);
    std::string out(size, '\0');
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.pixels.data(), 0, nullptr))
        throw IoError(std::string("png: ") + image.message);
    out.resize(size);
    return out;
}

/// Decodes a PNG into a 128x128 grayscale image. Color inputs are converted and alpha is
/// composited onto white; any other size is a BadImageShapeError.
inline RasterImage decode_png(const std::string& bytes) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
        throw BadImageShapeError(std::string("png: ") + image.message);
    if (image.width != kImageSize || image.height != kImageSize) {
        const auto w = image.width, h = image.height;
        png_image_free(&image);
        throw BadImageShapeError("image must be 128x128, got " + std::to_string(w) + "x" +
                                 std::to_string(h));
    }
    image.format = PNG_FORMAT_GRAY;
    png_color white{255, 255, 255};
    RasterImage img;
    if (!png_image_finish_read(&image, &white, img.pixels.data(), 0, nullptr))
        throw BadImageShapeError(std::string("png: ") + image.message);
    return img;
}

inline void write_png(const std::filesystem::path& path, const RasterImage& img) {
    write_text_file(path, encode_png(img));
}

inline RasterImage read_png(const std::filesystem::path& path) {
    return decode_png(read_text_file(path));
}

// ---------------------------------------------------------------------------
// rendered dataset layout: <out>/<id>/s{0..4}.png (or precise.png) and <out>/<id>.json

enum class RenderMode { Precise, Hand };

inline std::filesystem::path render_dir(const std::filesystem::path& root, const Sketch& s) {
    return root / s.id;
}

/// Materializes the renders of one sketch plus its single-record ground-truth file.
inline void write_render_set(const std::filesystem::path& root, const Sketch& sketch,
                             RenderMode mode, const NoiseConfig& cfg, std::uint64_t seed) {
    const auto dir = render_dir(root, sketch);
    std::filesystem::create_directories(dir);
    if (mode == RenderMode::Precise) {
        write_png(dir / "precise.png", render_precise(sketch));
    } else {
        const auto imgs = render_hand_samples(sketch, cfg, seed);
        for (std::size_t i = 0; i < imgs.size(); ++i)
            write_png(dir / ("s" + std::to_string(i) + ".png"), imgs[i]);
    }
    save_corpus(root / (sketch.id + ".json"), {sketch});
}

/// Loads the hand-drawn variants written by write_render_set.
inline std::vector<RasterImage> read_render_set(const std::filesystem::path& root,
                                                const Sketch& sketch, int samples) {
    std::vector<RasterImage> out;
    for (int i = 0; i < samples; ++i)
        out.push_back(read_png(render_dir(root, sketch) / ("s" + std::to_string(i) + ".png")));
    return out;
}

}  // namespace ppinet
