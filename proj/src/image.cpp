#include "recondet/image.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>

namespace recondet {

std::string to_hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

std::uint64_t file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read file for digest: " + path);
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
    if (in.eof()) break;
  }
  return h;
}

void atomic_write_text(const std::string& path, std::string_view text) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  std::filesystem::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw std::runtime_error("failed to write " + tmp.string());
  }
  std::filesystem::rename(tmp, target);
}

float normalize_u8(std::uint8_t v) {
  return static_cast<float>(v) / 255.f * 2.f - 1.f;
}

std::uint8_t denormalize_u8(float x) {
  float y = (x + 1.f) * 0.5f * 255.f;
  int v = static_cast<int>(std::lround(y));
  return static_cast<std::uint8_t>(std::clamp(v, 0, 255));
}

void PerturbSpec::validate() const {
  if (kind == PerturbKind::Jpeg) {
    if (level < 1 || level > 3)
      throw std::invalid_argument("jpeg perturbation level must be in {1,2,3}");
  } else {
    // Level 0 is the identity point used as a sweep baseline.
    if (level < 0 || level > 3)
      throw std::invalid_argument("gaussian blur level must be in {0,1,2,3}");
  }
}

std::string PerturbSpec::tag() const {
  if (kind == PerturbKind::GaussianBlur) return "blur_sigma_" + std::to_string(level);
  return "jpeg_level_" + std::to_string(level);
}

int jpeg_quality_for_level(int level) {
  switch (level) {
    case 1: return 90;
    case 2: return 60;
    case 3: return 30;
    default: throw std::invalid_argument("jpeg level must be in {1,2,3}");
  }
}

namespace {

Image from_mat_u8(const cv::Mat& bgr) {
  Image img(bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y) {
    const cv::Vec3b* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      img.at(0, y, x) = normalize_u8(row[x][2]);
      img.at(1, y, x) = normalize_u8(row[x][1]);
      img.at(2, y, x) = normalize_u8(row[x][0]);
    }
  }
  return img;
}

cv::Mat to_mat_u8(const Image& img) {
  cv::Mat bgr(img.height, img.width, CV_8UC3);
  for (int y = 0; y < img.height; ++y) {
    cv::Vec3b* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.width; ++x) {
      row[x][2] = denormalize_u8(img.at(0, y, x));
      row[x][1] = denormalize_u8(img.at(1, y, x));
      row[x][0] = denormalize_u8(img.at(2, y, x));
    }
  }
  return bgr;
}

std::uint16_t quant_u16(float x) {
  float y = (std::clamp(x, -1.f, 1.f) + 1.f) * 0.5f * 65535.f;
  long v = std::lround(y);
  return static_cast<std::uint16_t>(std::clamp(v, 0l, 65535l));
}

}  // namespace

Image load_image_native(const std::string& path) {
  if (!std::filesystem::exists(path))
    throw std::runtime_error("image file not found: " + path);
  cv::Mat raw = cv::imread(path, cv::IMREAD_ANYDEPTH | cv::IMREAD_COLOR);
  if (raw.empty())
    throw std::runtime_error("file is not a decodable image: " + path);
  Image img;
  if (raw.depth() == CV_16U) {
    img = Image(raw.rows, raw.cols);
    for (int y = 0; y < raw.rows; ++y) {
      const cv::Vec3w* row = raw.ptr<cv::Vec3w>(y);
      for (int x = 0; x < raw.cols; ++x) {
        img.at(0, y, x) = static_cast<float>(row[x][2]) / 65535.f * 2.f - 1.f;
        img.at(1, y, x) = static_cast<float>(row[x][1]) / 65535.f * 2.f - 1.f;
        img.at(2, y, x) = static_cast<float>(row[x][0]) / 65535.f * 2.f - 1.f;
      }
    }
  } else {
    cv::Mat u8;
    raw.convertTo(u8, CV_8UC3);
    img = from_mat_u8(u8);
  }
  return img;
}

Image load_image(const std::string& path, int target_size) {
  Image img = load_image_native(path);
  if (img.height != target_size || img.width != target_size)
    img = resize(img, target_size);
  return img;
}

void save_png(const Image& img, const std::string& path, int bit_depth) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  cv::Mat m;
  if (bit_depth == 16) {
    m = cv::Mat(img.height, img.width, CV_16UC3);
    for (int y = 0; y < img.height; ++y) {
      cv::Vec3w* row = m.ptr<cv::Vec3w>(y);
      for (int x = 0; x < img.width; ++x) {
        row[x][2] = quant_u16(img.at(0, y, x));
        row[x][1] = quant_u16(img.at(1, y, x));
        row[x][0] = quant_u16(img.at(2, y, x));
      }
    }
  } else if (bit_depth == 8) {
    m = to_mat_u8(img);
  } else {
    throw std::invalid_argument("png bit depth must be 8 or 16");
  }
  if (!cv::imwrite(path, m))
    throw std::runtime_error("failed to write png: " + path);
}

void save_jpeg(const Image& img, const std::string& path, int quality) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::vector<int> params = {cv::IMWRITE_JPEG_QUALITY, quality};
  if (!cv::imwrite(path, to_mat_u8(img), params))
    throw std::runtime_error("failed to write jpeg: " + path);
}

namespace {

// Mirror index with edge repetition: ... 2 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
int mirror(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -1 - i;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

std::vector<double> gaussian_kernel(double sigma) {
  int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[i + radius] = v;
    sum += v;
  }
  for (auto& v : k) v /= sum;
  return k;
}

}  // namespace

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma < 0) throw std::invalid_argument("gaussian_blur: sigma must be >= 0");
  if (sigma == 0) return img;
  const auto kernel = gaussian_kernel(sigma);
  const int radius = (static_cast<int>(kernel.size()) - 1) / 2;
  const int hgt = img.height, wdt = img.width;

  Image tmp(hgt, wdt), out(hgt, wdt);
  // Horizontal pass.
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < hgt; ++y)
      for (int x = 0; x < wdt; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[i + radius] * img.at(ch, y, mirror(x + i, wdt));
        tmp.at(ch, y, x) = static_cast<float>(acc);
      }
  // Vertical pass.
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < hgt; ++y)
      for (int x = 0; x < wdt; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[i + radius] * tmp.at(ch, mirror(y + i, hgt), x);
        out.at(ch, y, x) = std::clamp(static_cast<float>(acc), -1.f, 1.f);
      }
  return out;
}

Image jpeg_compress(const Image& img, int level) {
  int quality = jpeg_quality_for_level(level);
  std::vector<int> params = {cv::IMWRITE_JPEG_QUALITY, quality};
  std::vector<unsigned char> buf;
  if (!cv::imencode(".jpg", to_mat_u8(img), buf, params))
    throw std::runtime_error("jpeg encode failed");
  cv::Mat dec = cv::imdecode(buf, cv::IMREAD_COLOR);
  if (dec.empty()) throw std::runtime_error("jpeg decode failed");
  return from_mat_u8(dec);
}

Image resize(const Image& img, int size) {
  if (size < 8) throw std::invalid_argument("resize: size must be >= 8");
  if (size == img.height && size == img.width) return img;
  Image out(size, size);
  const double sy = static_cast<double>(img.height) / size;
  const double sx = static_cast<double>(img.width) / size;
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < size; ++y) {
      // Half-pixel center convention.
      double fy = (y + 0.5) * sy - 0.5;
      int y0 = static_cast<int>(std::floor(fy));
      double wy = fy - y0;
      int y0c = std::clamp(y0, 0, img.height - 1);
      int y1c = std::clamp(y0 + 1, 0, img.height - 1);
      for (int x = 0; x < size; ++x) {
        double fx = (x + 0.5) * sx - 0.5;
        int x0 = static_cast<int>(std::floor(fx));
        double wx = fx - x0;
        int x0c = std::clamp(x0, 0, img.width - 1);
        int x1c = std::clamp(x0 + 1, 0, img.width - 1);
        double v = (1 - wy) * ((1 - wx) * img.at(ch, y0c, x0c) + wx * img.at(ch, y0c, x1c)) +
                   wy * ((1 - wx) * img.at(ch, y1c, x0c) + wx * img.at(ch, y1c, x1c));
        out.at(ch, y, x) = static_cast<float>(v);
      }
    }
  return out;
}

Image apply_perturbation(const Image& img, const PerturbSpec& spec) {
  spec.validate();
  if (spec.kind == PerturbKind::GaussianBlur) {
    if (spec.level == 0) return img;
    return gaussian_blur(img, static_cast<double>(spec.level));
  }
  return jpeg_compress(img, spec.level);
}

void snap_u16(Image& img) {
  for (auto& v : img.data)
    v = static_cast<float>(quant_u16(v)) / 65535.f * 2.f - 1.f;
}

double mse(const Image& a, const Image& b) {
  if (a.size() != b.size()) throw std::invalid_argument("mse: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = static_cast<double>(a.data[i]) - b.data[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

double psnr(const Image& a, const Image& b) {
  double m = mse(a, b);
  if (m <= 0) return std::numeric_limits<double>::infinity();
  // Peak-to-peak of the [-1, 1] range is 2.
  return 10.0 * std::log10(4.0 / m);
}

}  // namespace recondet
