#pragma once

// In-memory RGB image plus PNG and JPEG codecs (libpng / libjpeg).

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "cov/errors.hpp"

namespace cov {

struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> rgb;  // row-major, 3 channels, values in [0,1]

    Image() = default;
    Image(int w, int h, float r = 0, float g = 0, float b = 0)
        : width(w), height(h), rgb(static_cast<size_t>(w) * h * 3) {
        for (size_t i = 0; i + 2 < rgb.size(); i += 3) {
            rgb[i] = r;
            rgb[i + 1] = g;
            rgb[i + 2] = b;
        }
    }

    float* pixel(int x, int y) {
        return rgb.data() + (static_cast<size_t>(y) * width + x) * 3;
    }
    const float* pixel(int x, int y) const {
        return rgb.data() + (static_cast<size_t>(y) * width + x) * 3;
    }

    bool in_bounds(int x, int y) const {
        return x >= 0 && x < width && y >= 0 && y < height;
    }

    std::vector<uint8_t> to_bytes8() const {
        std::vector<uint8_t> out(rgb.size());
        for (size_t i = 0; i < rgb.size(); ++i) {
            float c = rgb[i];
            c = c < 0.0f ? 0.0f : (c > 1.0f ? 1.0f : c);
            out[i] = static_cast<uint8_t>(c * 255.0f + 0.5f);
        }
        return out;
    }

    static Image from_bytes8(int w, int h, const std::vector<uint8_t>& bytes) {
        Image img;
        img.width = w;
        img.height = h;
        img.rgb.resize(bytes.size());
        for (size_t i = 0; i < bytes.size(); ++i)
            img.rgb[i] = static_cast<float>(bytes[i]) / 255.0f;
        return img;
    }
};

namespace detail {

struct PngWriteSink {
    std::vector<uint8_t>* out;
};

inline void png_write_to_vector(png_structp png, png_bytep data, png_size_t len) {
    auto* sink = static_cast<PngWriteSink*>(png_get_io_ptr(png));
    sink->out->insert(sink->out->end(), data, data + len);
}

inline void png_noop_flush(png_structp) {}

struct PngReadSource {
    const uint8_t* data;
    size_t size;
    size_t pos;
};

inline void png_read_from_vector(png_structp png, png_bytep out, png_size_t len) {
    auto* src = static_cast<PngReadSource*>(png_get_io_ptr(png));
    if (src->pos + len > src->size)
        png_error(png, "read past end of buffer");
    std::memcpy(out, src->data + src->pos, len);
    src->pos += len;
}

struct JpegErrorMgr {
    jpeg_error_mgr mgr;
    jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    longjmp(err->jump, 1);
}

}  // namespace detail

inline std::vector<uint8_t> encode_png(const Image& img) {
    if (img.width <= 0 || img.height <= 0)
        throw EncodeFailureError("png: empty image");
    std::vector<uint8_t> out;
    detail::PngWriteSink sink{&out};

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw EncodeFailureError("png: write struct allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw EncodeFailureError("png: info struct allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw EncodeFailureError("png: encode failed");
    }
    png_set_write_fn(png, &sink, detail::png_write_to_vector, detail::png_noop_flush);
    png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    const auto bytes = img.to_bytes8();
    for (int y = 0; y < img.height; ++y)
        png_write_row(png, const_cast<png_bytep>(bytes.data() +
                                                 static_cast<size_t>(y) * img.width * 3));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

inline Image decode_png(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0)
        throw DecodeFailureError("png: bad signature");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DecodeFailureError("png: read struct allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DecodeFailureError("png: info struct allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DecodeFailureError("png: decode failed");
    }
    detail::PngReadSource src{bytes.data(), bytes.size(), 0};
    png_set_read_fn(png, &src, detail::png_read_from_vector);
    png_read_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const int color_type = png_get_color_type(png, info);
    const int bit_depth = png_get_bit_depth(png, info);

    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    std::vector<uint8_t> raw(static_cast<size_t>(w) * h * 3);
    for (png_uint_32 y = 0; y < h; ++y)
        png_read_row(png, raw.data() + static_cast<size_t>(y) * w * 3, nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return Image::from_bytes8(static_cast<int>(w), static_cast<int>(h), raw);
}

inline std::vector<uint8_t> encode_jpeg(const Image& img, int quality = 90) {
    if (img.width <= 0 || img.height <= 0)
        throw EncodeFailureError("jpeg: empty image");
    jpeg_compress_struct cinfo;
    detail::JpegErrorMgr err;
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = detail::jpeg_error_exit;

    unsigned char* buffer = nullptr;
    unsigned long buffer_size = 0;

    if (setjmp(err.jump)) {
        jpeg_destroy_compress(&cinfo);
        if (buffer) free(buffer);
        throw EncodeFailureError(std::string("jpeg: ") + err.message);
    }

    jpeg_create_compress(&cinfo);
    jpeg_mem_dest(&cinfo, &buffer, &buffer_size);
    cinfo.image_width = static_cast<JDIMENSION>(img.width);
    cinfo.image_height = static_cast<JDIMENSION>(img.height);
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);

    const auto bytes = img.to_bytes8();
    while (cinfo.next_scanline < cinfo.image_height) {
        JSAMPROW row = const_cast<JSAMPROW>(
            bytes.data() + static_cast<size_t>(cinfo.next_scanline) * img.width * 3);
        jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);

    std::vector<uint8_t> out(buffer, buffer + buffer_size);
    free(buffer);
    return out;
}

inline Image decode_jpeg(const std::vector<uint8_t>& bytes) {
    jpeg_decompress_struct cinfo;
    detail::JpegErrorMgr err;
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = detail::jpeg_error_exit;

    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw DecodeFailureError(std::string("jpeg: ") + err.message);
    }

    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    if (jpeg_read_header(&cinfo, TRUE) != JPEG_HEADER_OK) {
        jpeg_destroy_decompress(&cinfo);
        throw DecodeFailureError("jpeg: bad header");
    }
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);

    const int w = static_cast<int>(cinfo.output_width);
    const int h = static_cast<int>(cinfo.output_height);
    std::vector<uint8_t> raw(static_cast<size_t>(w) * h * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = raw.data() + static_cast<size_t>(cinfo.output_scanline) * w * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return Image::from_bytes8(w, h, raw);
}

inline void save_png(const Image& img, const std::string& path) {
    const auto bytes = encode_png(img);
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot open for writing: " + path);
    const size_t written = std::fwrite(bytes.data(), 1, bytes.size(), f);
    std::fclose(f);
    if (written != bytes.size()) throw IoError("short write: " + path);
}

inline std::vector<uint8_t> read_binary_file(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open file: " + path);
    std::fseek(f, 0, SEEK_END);
    const long size = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<uint8_t> bytes(size > 0 ? static_cast<size_t>(size) : 0);
    const size_t got = bytes.empty() ? 0 : std::fread(bytes.data(), 1, bytes.size(), f);
    std::fclose(f);
    if (got != bytes.size()) throw IoError("short read: " + path);
    return bytes;
}

inline Image load_image(const std::string& path) {
    const auto bytes = read_binary_file(path);
    if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0)
        return decode_png(bytes);
    if (bytes.size() >= 2 && bytes[0] == 0xFF && bytes[1] == 0xD8)
        return decode_jpeg(bytes);
    throw UnsupportedFormatError("unrecognized image format: " + path);
}

}  // namespace cov
