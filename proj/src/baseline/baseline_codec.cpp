#include "pmc/baseline/baseline_codec.hpp"

#include <jpeglib.h>
#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <cstdlib>
#include <memory>

#include "pmc/error.hpp"

namespace pmc::baseline {

Bytes png_encode(const Image8& image) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  const auto rgb = image.interleaved();
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, rgb.data(), 0, nullptr)) {
    throw Error(std::string("png encode failed: ") + img.message);
  }
  Bytes out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, rgb.data(), 0, nullptr)) {
    throw Error(std::string("png encode failed: ") + img.message);
  }
  out.resize(size);
  return out;
}

Image8 png_decode(std::span<const std::uint8_t> bytes) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw DecodeError(std::string("png decode failed: ") + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, rgb.data(), 0, nullptr)) {
    png_image_free(&img);
    throw DecodeError(std::string("png decode failed: ") + img.message);
  }
  return Image8::from_interleaved(rgb, img.height, img.width);
}

std::string to_string(Subsampling s) { return s == Subsampling::k420 ? "420" : "444"; }

Subsampling parse_subsampling(const std::string& s) {
  if (s == "420" || s == "4:2:0") return Subsampling::k420;
  if (s == "444" || s == "4:4:4") return Subsampling::k444;
  throw ConfigError("unknown chroma subsampling '" + s + "' (expected 420 or 444)");
}

void JpegConfig::validate() const {
  if (quality < 1 || quality > 100) throw ConfigError("jpeg quality must be in 1..100, got " + std::to_string(quality));
}

namespace {

// libjpeg reports fatal errors through error_exit; jump back out of the
// library and rethrow as a C++ exception after cleanup.
struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void on_error(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

void on_warning(j_common_ptr cinfo, int level) {
  // Corrupt-data warnings (level -1) are treated as errors.
  if (level < 0) on_error(cinfo);
}

}  // namespace

Bytes jpeg_encode(const Image8& image, const JpegConfig& cfg) {
  cfg.validate();
  const auto rgb = image.interleaved();
  jpeg_compress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = on_error;
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::free(buffer);
    throw Error(std::string("jpeg encode failed: ") + err.message);
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buffer, &size);
  cinfo.image_width = static_cast<JDIMENSION>(image.width);
  cinfo.image_height = static_cast<JDIMENSION>(image.height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, cfg.quality, TRUE);
  cinfo.optimize_coding = cfg.optimize ? TRUE : FALSE;
  const int luma = cfg.subsampling == Subsampling::k420 ? 2 : 1;
  cinfo.comp_info[0].h_samp_factor = luma;
  cinfo.comp_info[0].v_samp_factor = luma;
  for (int c = 1; c < 3; ++c) {
    cinfo.comp_info[c].h_samp_factor = 1;
    cinfo.comp_info[c].v_samp_factor = 1;
  }
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<JSAMPROW>(rgb.data() + cinfo.next_scanline * image.width * 3);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  Bytes out(buffer, buffer + size);
  jpeg_destroy_compress(&cinfo);
  std::free(buffer);
  return out;
}

Image8 jpeg_decode(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw DecodeError("jpeg decode failed: empty stream");
  jpeg_decompress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = on_error;
  err.mgr.emit_message = on_warning;
  // Declared before setjmp so a longjmp never skips its destructor.
  std::vector<std::uint8_t> rgb;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DecodeError(std::string("jpeg decode failed: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  if (cinfo.output_components != 3) {
    jpeg_destroy_decompress(&cinfo);
    throw DecodeError("jpeg decode failed: expected 3 components");
  }
  const std::size_t w = cinfo.output_width, h = cinfo.output_height;
  rgb.resize(w * h * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = rgb.data() + cinfo.output_scanline * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return Image8::from_interleaved(rgb, h, w);
}

std::vector<int> quality_grid() {
  std::vector<int> grid;
  for (int q = 95; q >= 50; q -= 3) grid.push_back(q);
  return grid;
}

JpegConfig quality_search(Subsampling subsampling, const std::function<QualityEval(const JpegConfig&)>& eval,
                          double accuracy_floor, bool optimize) {
  bool found = false;
  JpegConfig best;
  double best_size = 0;
  for (int q : quality_grid()) {
    const JpegConfig cfg{q, subsampling, optimize};
    const auto r = eval(cfg);
    if (r.accuracy >= accuracy_floor && (!found || r.mean_size < best_size)) {
      found = true;
      best = cfg;
      best_size = r.mean_size;
    }
  }
  if (!found) {
    throw NotFoundError("no jpeg quality in 95..50 reaches accuracy " + std::to_string(accuracy_floor));
  }
  return best;
}

}  // namespace pmc::baseline
