#include "fiberscope/image_source.hpp"

#include <tiffio.h>

#include <algorithm>
#include <cctype>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <mutex>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <string>

#include "fiberscope/error.hpp"

namespace fiberscope {

namespace {

RgbImage from_bgr(const cv::Mat& bgr) {
    RgbImage out(bgr.cols, bgr.rows);
    cv::Mat dst(bgr.rows, bgr.cols, CV_8UC3, out.data().data());
    cv::cvtColor(bgr, dst, cv::COLOR_BGR2RGB);
    return out;
}

cv::Mat decode_color(const cv::Mat& encoded) {
    cv::Mat m;
    try {
        m = cv::imdecode(encoded, cv::IMREAD_COLOR);
    } catch (const cv::Exception&) {
        m.release();
    }
    return m;
}

// libtiff prints warnings for unknown private tags; keep stderr quiet.
void silence_libtiff() {
    static std::once_flag once;
    std::call_once(once, [] { TIFFSetWarningHandler(nullptr); });
}

thread_local std::string tiff_error_text;

void capture_tiff_error(const char* module, const char* fmt, va_list ap) {
    char buf[512];
    std::vsnprintf(buf, sizeof buf, fmt, ap);
    tiff_error_text = std::string(module ? module : "tiff") + ": " + buf;
}

}  // namespace

MemoryImageSource::MemoryImageSource(RgbImage image) : image_(std::move(image)) {
    if (image_.empty()) throw InvalidArgument("MemoryImageSource: empty image");
}

struct TiffImageSource::Impl {
    TIFF* tif = nullptr;
    std::mutex mu;
    ~Impl() {
        if (tif) TIFFClose(tif);
    }
};

TiffImageSource::TiffImageSource(const std::filesystem::path& path) : impl_(std::make_unique<Impl>()) {
    silence_libtiff();
    TIFFSetErrorHandler(capture_tiff_error);
    impl_->tif = TIFFOpen(path.c_str(), "r");
    if (!impl_->tif) throw IoError("cannot open TIFF " + path.string() + ": " + tiff_error_text);
    std::uint32_t w = 0, h = 0;
    TIFFGetField(impl_->tif, TIFFTAG_IMAGEWIDTH, &w);
    TIFFGetField(impl_->tif, TIFFTAG_IMAGELENGTH, &h);
    char emsg[1024] = {};
    if (w == 0 || h == 0 || !TIFFRGBAImageOK(impl_->tif, emsg))
        throw IoError("unsupported TIFF " + path.string() + ": " + emsg);
    if (w > std::uint32_t(INT32_MAX) || h > std::uint32_t(INT32_MAX))
        throw IoError("TIFF too large: " + path.string());
    width_ = int(w);
    height_ = int(h);
}

TiffImageSource::~TiffImageSource() = default;

RgbImage TiffImageSource::read(const PixelRect& rect) const {
    RgbImage out(std::max(rect.width(), 1), std::max(rect.height(), 1), 0);
    const PixelRect in = rect.intersect({0, 0, width_, height_});
    if (in.empty()) return out;
    std::vector<std::uint32_t> raster(std::size_t(in.width()) * in.height());
    {
        std::lock_guard lock(impl_->mu);
        TIFFRGBAImage img;
        char emsg[1024] = {};
        if (!TIFFRGBAImageBegin(&img, impl_->tif, 0, emsg))
            throw IoError(std::string("TIFF decode: ") + emsg);
        img.req_orientation = ORIENTATION_TOPLEFT;
        img.row_offset = in.y0;
        img.col_offset = in.x0;
        const int ok = TIFFRGBAImageGet(&img, raster.data(), std::uint32_t(in.width()),
                                        std::uint32_t(in.height()));
        TIFFRGBAImageEnd(&img);
        if (!ok) throw IoError("TIFF decode failed: " + tiff_error_text);
    }
    for (int y = 0; y < in.height(); ++y) {
        std::uint8_t* dst = out.pixel(in.x0 - rect.x0, in.y0 - rect.y0 + y);
        const std::uint32_t* src = raster.data() + std::size_t(y) * in.width();
        for (int x = 0; x < in.width(); ++x, dst += 3) {
            dst[0] = std::uint8_t(TIFFGetR(src[x]));
            dst[1] = std::uint8_t(TIFFGetG(src[x]));
            dst[2] = std::uint8_t(TIFFGetB(src[x]));
        }
    }
    return out;
}

bool is_tiff_path(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".tif" || ext == ".tiff";
}

std::unique_ptr<ImageSource> open_image_source(const std::filesystem::path& path) {
    if (is_tiff_path(path)) return std::make_unique<TiffImageSource>(path);
    return std::make_unique<MemoryImageSource>(read_image(path));
}

RgbImage decode_image(std::span<const std::uint8_t> bytes) {
    if (bytes.empty()) throw IoError("empty image data");
    const cv::Mat buf(1, int(bytes.size()), CV_8U, const_cast<std::uint8_t*>(bytes.data()));
    const cv::Mat m = decode_color(buf);
    if (m.empty()) throw IoError("undecodable image data");
    return from_bgr(m);
}

RgbImage read_image(const std::filesystem::path& path) {
    if (is_tiff_path(path)) {
        const TiffImageSource src(path);
        return src.read({0, 0, src.width(), src.height()});
    }
    cv::Mat m;
    try {
        m = cv::imread(path.string(), cv::IMREAD_COLOR);
    } catch (const cv::Exception&) {
    }
    if (m.empty()) throw IoError("cannot decode image " + path.string());
    return from_bgr(m);
}

void write_tiff(const RgbImage& image, const std::filesystem::path& path, int tile_size) {
    if (image.empty()) throw InvalidArgument("write_tiff: empty image");
    if (tile_size < 0 || tile_size % 16 != 0)
        throw InvalidArgument("write_tiff: tile size must be a multiple of 16");
    silence_libtiff();
    const bool big = image.data().size() > (std::size_t(1) << 31);
    TIFF* tif = TIFFOpen(path.c_str(), big ? "w8" : "w");
    if (!tif) throw IoError("cannot create " + path.string());
    const int w = image.width(), h = image.height();
    TIFFSetField(tif, TIFFTAG_IMAGEWIDTH, std::uint32_t(w));
    TIFFSetField(tif, TIFFTAG_IMAGELENGTH, std::uint32_t(h));
    TIFFSetField(tif, TIFFTAG_SAMPLESPERPIXEL, 3);
    TIFFSetField(tif, TIFFTAG_BITSPERSAMPLE, 8);
    TIFFSetField(tif, TIFFTAG_PHOTOMETRIC, PHOTOMETRIC_RGB);
    TIFFSetField(tif, TIFFTAG_PLANARCONFIG, PLANARCONFIG_CONTIG);
    TIFFSetField(tif, TIFFTAG_COMPRESSION, COMPRESSION_DEFLATE);
    bool ok = true;
    if (tile_size > 0) {
        TIFFSetField(tif, TIFFTAG_TILEWIDTH, std::uint32_t(tile_size));
        TIFFSetField(tif, TIFFTAG_TILELENGTH, std::uint32_t(tile_size));
        std::vector<std::uint8_t> buf(std::size_t(tile_size) * tile_size * 3);
        for (int ty = 0; ty < h && ok; ty += tile_size)
            for (int tx = 0; tx < w && ok; tx += tile_size) {
                const RgbImage t = image.crop({tx, ty, tx + tile_size, ty + tile_size});
                std::memcpy(buf.data(), t.data().data(), buf.size());
                ok = TIFFWriteTile(tif, buf.data(), std::uint32_t(tx), std::uint32_t(ty), 0, 0) >= 0;
            }
    } else {
        TIFFSetField(tif, TIFFTAG_ROWSPERSTRIP, TIFFDefaultStripSize(tif, 0));
        std::vector<std::uint8_t> row(std::size_t(w) * 3);
        for (int y = 0; y < h && ok; ++y) {
            std::memcpy(row.data(), image.row(y), row.size());
            ok = TIFFWriteScanline(tif, row.data(), std::uint32_t(y), 0) >= 0;
        }
    }
    TIFFClose(tif);
    if (!ok) throw IoError("failed writing " + path.string());
}

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
    if (image.empty()) throw InvalidArgument("encode_png: empty image");
    const cv::Mat rgb(image.height(), image.width(), CV_8UC3, const_cast<std::uint8_t*>(image.data().data()));
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    std::vector<std::uint8_t> out;
    cv::imencode(".png", bgr, out);
    return out;
}

std::vector<std::uint8_t> encode_png(const BinaryMask& mask) {
    cv::Mat m(mask.height(), mask.width(), CV_8U);
    for (int y = 0; y < mask.height(); ++y) {
        const std::uint8_t* src = mask.row(y);
        std::uint8_t* dst = m.ptr<std::uint8_t>(y);
        for (int x = 0; x < mask.width(); ++x) dst[x] = src[x] ? 255 : 0;
    }
    std::vector<std::uint8_t> out;
    cv::imencode(".png", m, out);
    return out;
}

BinaryMask decode_mask_png(std::span<const std::uint8_t> bytes) {
    if (bytes.empty()) throw IoError("empty mask data");
    const cv::Mat buf(1, int(bytes.size()), CV_8U, const_cast<std::uint8_t*>(bytes.data()));
    cv::Mat m;
    try {
        m = cv::imdecode(buf, cv::IMREAD_GRAYSCALE);
    } catch (const cv::Exception&) {
    }
    if (m.empty()) throw IoError("undecodable mask image");
    BinaryMask out(m.cols, m.rows);
    for (int y = 0; y < m.rows; ++y) {
        const std::uint8_t* src = m.ptr<std::uint8_t>(y);
        std::uint8_t* dst = out.row(y);
        for (int x = 0; x < m.cols; ++x) dst[x] = src[x] ? 1 : 0;
    }
    return out;
}

}  // namespace fiberscope
