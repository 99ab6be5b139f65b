#include "drc/image_io.hpp"

#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include <jpeglib.h>
#include <png.h>
#include <zlib.h>

#include "drc/common.hpp"

namespace drc {

namespace {

constexpr double kR601 = 0.299, kG601 = 0.587, kB601 = 0.114;

std::string lower_ext(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    for (char& c : ext) c = char(std::tolower(static_cast<unsigned char>(c)));
    return ext;
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// ---------------------------------------------------------------------------
// PNG reading (libpng)

Tensor load_png(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw DataError("cannot open " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                             nullptr);
    if (!png) throw DataError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError("libpng init failed");
    }
    std::vector<png_bytep> row_ptrs;
    std::vector<png_byte> pixels;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("malformed PNG: " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    const int width = int(png_get_image_width(png, info));
    const int height = int(png_get_image_height(png, info));
    const int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);

    // Normalize every variant to 8- or 16-bit gray/RGB without alpha.
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    if (depth == 16) png_set_swap(png); // keep little-endian samples
    png_read_update_info(png, info);

    depth = png_get_bit_depth(png, info);
    const int channels = int(png_get_channels(png, info));
    const std::size_t row_bytes = png_get_rowbytes(png, info);
    pixels.resize(row_bytes * std::size_t(height));
    row_ptrs.resize(std::size_t(height));
    for (int y = 0; y < height; ++y) row_ptrs[std::size_t(y)] = &pixels[row_bytes * std::size_t(y)];
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    const double scale = depth == 16 ? 65535.0 : 255.0;
    Tensor out({height, width});
    for (int y = 0; y < height; ++y) {
        const png_byte* row = &pixels[row_bytes * std::size_t(y)];
        for (int x = 0; x < width; ++x) {
            double v;
            if (channels >= 3) {
                double rgb[3];
                for (int c = 0; c < 3; ++c) {
                    if (depth == 16) {
                        const png_byte* p = row + (std::size_t(x) * channels + c) * 2;
                        rgb[c] = double(p[0] | (p[1] << 8));
                    } else {
                        rgb[c] = double(row[std::size_t(x) * channels + c]);
                    }
                }
                v = kR601 * rgb[0] + kG601 * rgb[1] + kB601 * rgb[2];
            } else {
                if (depth == 16) {
                    const png_byte* p = row + std::size_t(x) * 2;
                    v = double(p[0] | (p[1] << 8));
                } else {
                    v = double(row[std::size_t(x)]);
                }
            }
            out.at(y, x) = v / scale;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// JPEG reading (libjpeg)

struct JpegErrorMgr {
    jpeg_error_mgr base;
    jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
    longjmp(reinterpret_cast<JpegErrorMgr*>(cinfo->err)->jump, 1);
}

Tensor load_jpeg(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw DataError("cannot open " + path.string());

    jpeg_decompress_struct cinfo;
    JpegErrorMgr err;
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw DataError("malformed JPEG: " + path.string());
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, fp.get());
    jpeg_read_header(&cinfo, TRUE);
    jpeg_start_decompress(&cinfo);

    const int width = int(cinfo.output_width);
    const int height = int(cinfo.output_height);
    const int channels = cinfo.output_components;
    if (channels != 1 && channels != 3) {
        jpeg_destroy_decompress(&cinfo);
        throw DataError("unsupported JPEG component count in " + path.string());
    }
    std::vector<JSAMPLE> row(std::size_t(width) * std::size_t(channels));
    Tensor out({height, width});
    while (cinfo.output_scanline < cinfo.output_height) {
        const int y = int(cinfo.output_scanline);
        JSAMPROW rp = row.data();
        jpeg_read_scanlines(&cinfo, &rp, 1);
        for (int x = 0; x < width; ++x) {
            double v;
            if (channels == 3)
                v = kR601 * row[std::size_t(x) * 3] + kG601 * row[std::size_t(x) * 3 + 1] +
                    kB601 * row[std::size_t(x) * 3 + 2];
            else
                v = double(row[std::size_t(x)]);
            out.at(y, x) = v / 255.0;
        }
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return out;
}

// ---------------------------------------------------------------------------
// PGM / PPM

int read_pnm_token(std::istream& in) {
    // Skips whitespace and '#' comments.
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
    int v = -1;
    in >> v;
    return v;
}

Tensor load_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    char p, kind;
    in.get(p);
    in.get(kind);
    if (p != 'P' || (kind != '2' && kind != '5' && kind != '6'))
        throw DataError("unsupported PNM magic in " + path.string());
    const int width = read_pnm_token(in);
    const int height = read_pnm_token(in);
    const int maxval = read_pnm_token(in);
    if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535)
        throw DataError("malformed PNM header in " + path.string());

    Tensor out({height, width});
    const int channels = kind == '6' ? 3 : 1;
    if (kind == '2') {
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                const int v = read_pnm_token(in);
                if (v < 0) throw DataError("truncated PGM: " + path.string());
                out.at(y, x) = double(v) / maxval;
            }
        return out;
    }
    in.get(); // single whitespace after maxval
    const int bytes_per = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> row(std::size_t(width) * channels * bytes_per);
    for (int y = 0; y < height; ++y) {
        in.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size()));
        if (!in) throw DataError("truncated PNM: " + path.string());
        for (int x = 0; x < width; ++x) {
            double v = 0.0;
            for (int c = 0; c < channels; ++c) {
                const std::size_t i = (std::size_t(x) * channels + c) * bytes_per;
                // PNM 16-bit is big-endian.
                const double s = bytes_per == 2 ? double((row[i] << 8) | row[i + 1])
                                                : double(row[i]);
                v += (channels == 3 ? (c == 0 ? kR601 : c == 1 ? kG601 : kB601) : 1.0) * s;
            }
            out.at(y, x) = v / maxval;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Deterministic PNG writing: filter 0 rows inside a zlib stream made of
// stored (uncompressed) deflate blocks.

void append_u32be(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(std::uint8_t(v >> 24));
    out.push_back(std::uint8_t(v >> 16));
    out.push_back(std::uint8_t(v >> 8));
    out.push_back(std::uint8_t(v));
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  const std::vector<std::uint8_t>& payload) {
    append_u32be(out, std::uint32_t(payload.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    const auto crc =
        crc32(0, out.data() + start, uInt(out.size() - start));
    append_u32be(out, std::uint32_t(crc));
}

void write_png_impl(const std::filesystem::path& path, const std::uint8_t* pixels,
                    int width, int height, int channels) {
    if (width < 1 || height < 1) throw DataError("PNG write: empty image");

    // Raw scanline stream: one filter byte (0) per row.
    std::vector<std::uint8_t> raw;
    const std::size_t stride = std::size_t(width) * std::size_t(channels);
    raw.reserve(std::size_t(height) * (stride + 1));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);
        raw.insert(raw.end(), pixels + std::size_t(y) * stride,
                   pixels + (std::size_t(y) + 1) * stride);
    }

    // zlib container with stored deflate blocks.
    std::vector<std::uint8_t> z;
    z.push_back(0x78);
    z.push_back(0x01);
    std::size_t pos = 0;
    while (pos < raw.size()) {
        const std::size_t len = std::min<std::size_t>(65535, raw.size() - pos);
        const bool last = pos + len == raw.size();
        z.push_back(last ? 1 : 0);
        z.push_back(std::uint8_t(len & 0xFF));
        z.push_back(std::uint8_t(len >> 8));
        z.push_back(std::uint8_t(~len & 0xFF));
        z.push_back(std::uint8_t((~len >> 8) & 0xFF));
        z.insert(z.end(), raw.begin() + std::ptrdiff_t(pos),
                 raw.begin() + std::ptrdiff_t(pos + len));
        pos += len;
    }
    const auto adler = adler32(adler32(0, nullptr, 0), raw.data(), uInt(raw.size()));
    append_u32be(z, std::uint32_t(adler));

    std::vector<std::uint8_t> png = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
    std::vector<std::uint8_t> ihdr;
    append_u32be(ihdr, std::uint32_t(width));
    append_u32be(ihdr, std::uint32_t(height));
    ihdr.push_back(8);                            // bit depth
    ihdr.push_back(channels == 3 ? 2 : 0);        // color type
    ihdr.push_back(0);                            // compression
    ihdr.push_back(0);                            // filter
    ihdr.push_back(0);                            // no interlace
    append_chunk(png, "IHDR", ihdr);
    append_chunk(png, "IDAT", z);
    append_chunk(png, "IEND", {});

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(png.data()), std::streamsize(png.size()));
    if (!out) throw DataError("short write to " + path.string());
}

} // namespace

Tensor load_image_gray(const std::filesystem::path& path) {
    const std::string ext = lower_ext(path);
    Tensor img;
    if (ext == ".png")
        img = load_png(path);
    else if (ext == ".jpg" || ext == ".jpeg")
        img = load_jpeg(path);
    else if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm")
        img = load_pnm(path);
    else
        throw DataError("unsupported image format '" + ext + "' for " + path.string());
    if (img.size() == 0) throw DataError("empty image: " + path.string());
    if (!img.all_finite()) throw DataError("non-finite pixels in " + path.string());
    return img;
}

void write_png_rgb8(const std::filesystem::path& path, const std::uint8_t* pixels,
                    int width, int height) {
    write_png_impl(path, pixels, width, height, 3);
}

void write_png_gray8(const std::filesystem::path& path, const std::uint8_t* pixels,
                     int width, int height) {
    write_png_impl(path, pixels, width, height, 1);
}

void write_pgm(const std::filesystem::path& path, const std::uint8_t* pixels, int width,
               int height) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << "P5\n" << width << " " << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels),
              std::streamsize(std::size_t(width) * std::size_t(height)));
}

} // namespace drc
