#include "hsd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "hsd/errors.hpp"

namespace hsd {

namespace {

void check_same_dims(const Image& a, const Image& b, const char* what) {
  if (a.width() != b.width() || a.height() != b.height()) throw ShapeError(std::string(what) + ": dimension mismatch");
}

float gray(const Image& image, int x, int y) {
  return 0.299f * image.at(x, y, 0) + 0.587f * image.at(x, y, 1) + 0.114f * image.at(x, y, 2);
}

}  // namespace

Image resize_bilinear(const Image& image, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) throw RangeError("resize_bilinear: target dimensions must be positive");
  if (image.empty()) throw ShapeError("resize_bilinear: empty image");
  Image out(out_w, out_h);
  const double sx = static_cast<double>(image.width()) / out_w;
  const double sy = static_cast<double>(image.height()) / out_h;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(image.height() - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height() - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(image.width() - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width() - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = (1 - wx) * image.at(x0, y0, c) + wx * image.at(x1, y0, c);
        const double bot = (1 - wx) * image.at(x0, y1, c) + wx * image.at(x1, y1, c);
        out.at(x, y, c) = static_cast<float>((1 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

ToyExtractor::ToyExtractor(int projected_dim, std::uint64_t seed) : projected_dim_(projected_dim), seed_(seed) {
  if (projected_dim < 0 || projected_dim > 64) throw ConfigError("ToyExtractor: projected_dim must be in [0, 64]");
  if (projected_dim_ > 0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(64.0));
    projection_.resize(projected_dim_, 64);
    for (int r = 0; r < projected_dim_; ++r) {
      for (int c = 0; c < 64; ++c) projection_(r, c) = n(rng);
    }
  }
}

int ToyExtractor::dim() const { return projected_dim_ > 0 ? projected_dim_ : 64; }

std::string ToyExtractor::id() const {
  if (projected_dim_ == 0) return "toy-gray8x8-v1";
  return "toy-gray8x8-proj" + std::to_string(projected_dim_) + "-seed" + std::to_string(seed_) + "-v1";
}

Eigen::VectorXd ToyExtractor::extract(const Image& image) const {
  const Image small = resize_bilinear(image, 8, 8);
  Eigen::VectorXd v(64);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) v(y * 8 + x) = gray(small, x, y);
  }
  if (projected_dim_ == 0) return v;
  return projection_ * v;
}

Eigen::VectorXd ToyFaceEmbedder::embed(const Image& image) const {
  if (image.width() < 2 || image.height() < 2) throw ShapeError("ToyFaceEmbedder: image too small");
  const Image head = image.crop(image.width() / 4, 0, image.width() / 2, image.height() / 2);
  const Image small = resize_bilinear(head, 8, 8);
  Eigen::VectorXd v(8 * 8 * 3);
  for (std::size_t i = 0; i < small.data().size(); ++i) v(static_cast<Eigen::Index>(i)) = small.data()[i];
  v.array() -= v.mean();
  const double norm = v.norm();
  if (norm < 1e-12) throw ContractError("ToyFaceEmbedder: constant image has no embedding");
  return v / norm;
}

FeatureStats stats_from_features(std::vector<Eigen::VectorXd> features) {
  if (features.size() < 2) throw InsufficientDataError("compute_stats: need at least 2 samples");
  const Eigen::Index d = features.front().size();
  for (const auto& f : features) {
    if (f.size() != d) throw ShapeError("compute_stats: inconsistent feature dimensions");
  }
  std::sort(features.begin(), features.end(), [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
  });
  FeatureStats s;
  s.n = static_cast<long>(features.size());
  s.mu = Eigen::VectorXd::Zero(d);
  for (const auto& f : features) s.mu += f;
  s.mu /= static_cast<double>(s.n);
  s.sigma = Eigen::MatrixXd::Zero(d, d);
  for (const auto& f : features) {
    const Eigen::VectorXd c = f - s.mu;
    s.sigma.noalias() += c * c.transpose();
  }
  s.sigma /= static_cast<double>(s.n - 1);
  return s;
}

FeatureStats compute_stats(std::span<const Image> images, const FeatureExtractor& extractor) {
  if (images.size() < 2) throw InsufficientDataError("compute_stats: need at least 2 images");
  std::vector<Eigen::VectorXd> features;
  features.reserve(images.size());
  for (const auto& img : images) features.push_back(extractor.extract(img));
  return stats_from_features(std::move(features));
}

FeatureStats merge_stats(const FeatureStats& a, const FeatureStats& b) {
  if (a.mu.size() != b.mu.size()) throw ShapeError("merge_stats: dimension mismatch");
  const double na = static_cast<double>(a.n);
  const double nb = static_cast<double>(b.n);
  const double n = na + nb;
  const Eigen::VectorXd delta = b.mu - a.mu;
  FeatureStats out;
  out.n = a.n + b.n;
  out.mu = a.mu + delta * (nb / n);
  const Eigen::MatrixXd m2 = a.sigma * (na - 1) + b.sigma * (nb - 1) + delta * delta.transpose() * (na * nb / n);
  out.sigma = m2 / (n - 1);
  return out;
}

namespace {

constexpr double kEigenClip = -1e-6;

void check_covariance(const Eigen::MatrixXd& s, const char* which) {
  const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
  if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale) {
    throw NumericalError(std::string("frechet_distance: covariance ") + which + " is not symmetric");
  }
}

// Symmetric PSD square root with small negative eigenvalues clipped to zero.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& s, const char* which) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (s + s.transpose()));
  Eigen::VectorXd lambda = eig.eigenvalues();
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (lambda(i) < kEigenClip) {
      throw NumericalError(std::string("frechet_distance: covariance ") + which + " is indefinite");
    }
    lambda(i) = std::sqrt(std::max(0.0, lambda(i)));
  }
  return eig.eigenvectors() * lambda.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  if (a.mu.size() != b.mu.size() || a.sigma.rows() != a.mu.size() || b.sigma.rows() != b.mu.size() ||
      a.sigma.cols() != a.mu.size() || b.sigma.cols() != b.mu.size()) {
    throw ShapeError("frechet_distance: dimension mismatch");
  }
  check_covariance(a.sigma, "a");
  check_covariance(b.sigma, "b");
  // tr((Sa Sb)^1/2) = tr((Sa^1/2 Sb Sa^1/2)^1/2), the inner product being symmetric PSD.
  const Eigen::MatrixXd root_a = psd_sqrt(a.sigma, "a");
  const Eigen::MatrixXd inner = root_a * b.sigma * root_a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  double tr_covmean = 0.0;
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) tr_covmean += std::sqrt(std::max(0.0, eig.eigenvalues()(i)));
  const double d = (a.mu - b.mu).squaredNorm() + a.sigma.trace() + b.sigma.trace() - 2.0 * tr_covmean;
  return std::max(0.0, d);
}

double fid(std::span<const Image> set_a, std::span<const Image> set_b, const FeatureExtractor& extractor) {
  return frechet_distance(compute_stats(set_a, extractor), compute_stats(set_b, extractor));
}

namespace {

std::vector<Image> black_out(std::span<const Image> images, std::span<const SemanticLayout> layouts) {
  if (images.size() != layouts.size()) throw PairingError("mask_fid: every image needs exactly one layout");
  const ClassSet group = ClassTaxonomy::head_group() | ClassTaxonomy::body_group();
  std::vector<Image> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& img = images[i];
    const SemanticLayout& l = layouts[i];
    if (l.width() != img.width() || l.height() != img.height()) throw ShapeError("mask_fid: layout/image size mismatch");
    Image masked = img;
    for (int y = 0; y < img.height(); ++y) {
      for (int x = 0; x < img.width(); ++x) {
        if (!group.contains(l.at(x, y))) continue;
        for (int c = 0; c < 3; ++c) masked.at(x, y, c) = 0.0f;
      }
    }
    out.push_back(std::move(masked));
  }
  return out;
}

}  // namespace

double mask_fid(std::span<const Image> results, std::span<const Image> refs,
                std::span<const SemanticLayout> result_layouts, std::span<const SemanticLayout> ref_layouts,
                const FeatureExtractor& extractor) {
  const std::vector<Image> a = black_out(results, result_layouts);
  const std::vector<Image> b = black_out(refs, ref_layouts);
  return fid(a, b, extractor);
}

Image focal_crop(const Image& image) {
  if (image.width() % 2 != 0 || image.height() % 2 != 0) throw ShapeError("focal_crop: dimensions must be even");
  const int w = image.width() / 2;
  const int h = image.height() / 2;
  return image.crop((image.width() - w) / 2, (image.height() - h) / 2, w, h);
}

double focal_fid(std::span<const Image> results, std::span<const Image> refs, const FeatureExtractor& extractor) {
  std::vector<Image> a;
  std::vector<Image> b;
  for (const auto& img : results) a.push_back(focal_crop(img));
  for (const auto& img : refs) b.push_back(focal_crop(img));
  return fid(a, b, extractor);
}

namespace {

constexpr int kSsimRadius = 5;
constexpr double kSsimSigma = 1.5;

int reflect(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

std::vector<double> gaussian_kernel() {
  std::vector<double> k(2 * kSsimRadius + 1);
  double sum = 0.0;
  for (int i = -kSsimRadius; i <= kSsimRadius; ++i) {
    k[static_cast<std::size_t>(i + kSsimRadius)] = std::exp(-(i * i) / (2.0 * kSsimSigma * kSsimSigma));
    sum += k[static_cast<std::size_t>(i + kSsimRadius)];
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Separable Gaussian filter of a single-channel plane.
std::vector<double> blur(const std::vector<double>& plane, int w, int h, const std::vector<double>& k) {
  std::vector<double> tmp(plane.size()), out(plane.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int d = -kSsimRadius; d <= kSsimRadius; ++d) {
        s += k[static_cast<std::size_t>(d + kSsimRadius)] * plane[static_cast<std::size_t>(y * w + reflect(x + d, w))];
      }
      tmp[static_cast<std::size_t>(y * w + x)] = s;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int d = -kSsimRadius; d <= kSsimRadius; ++d) {
        s += k[static_cast<std::size_t>(d + kSsimRadius)] * tmp[static_cast<std::size_t>(reflect(y + d, h) * w + x)];
      }
      out[static_cast<std::size_t>(y * w + x)] = s;
    }
  }
  return out;
}

}  // namespace

std::vector<double> ssim_map(const Image& a, const Image& b) {
  check_same_dims(a, b, "ssim_map");
  constexpr double c1 = (0.01 * 1.0) * (0.01 * 1.0);
  constexpr double c2 = (0.03 * 1.0) * (0.03 * 1.0);
  const int w = a.width();
  const int h = a.height();
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  const std::vector<double> k = gaussian_kernel();
  std::vector<double> out(n, 0.0);
  for (int c = 0; c < 3; ++c) {
    std::vector<double> pa(n), pb(n), aa(n), bb(n), ab(n);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y * w + x);
        pa[i] = a.at(x, y, c);
        pb[i] = b.at(x, y, c);
        aa[i] = pa[i] * pa[i];
        bb[i] = pb[i] * pb[i];
        ab[i] = pa[i] * pb[i];
      }
    }
    const auto mu_a = blur(pa, w, h, k);
    const auto mu_b = blur(pb, w, h, k);
    const auto e_aa = blur(aa, w, h, k);
    const auto e_bb = blur(bb, w, h, k);
    const auto e_ab = blur(ab, w, h, k);
    for (std::size_t i = 0; i < n; ++i) {
      const double va = e_aa[i] - mu_a[i] * mu_a[i];
      const double vb = e_bb[i] - mu_b[i] * mu_b[i];
      const double cov = e_ab[i] - mu_a[i] * mu_b[i];
      const double num = (2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2);
      const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
      out[i] += num / den / 3.0;
    }
  }
  return out;
}

double masked_ssim(const Image& a, const Image& b, const Mask& mask) {
  check_same_dims(a, b, "masked_ssim");
  if (mask.width() != a.width() || mask.height() != a.height()) throw ShapeError("masked_ssim: mask size mismatch");
  if (!mask.any()) throw InsufficientDataError("masked_ssim: empty mask");
  const std::vector<double> map = ssim_map(a, b);
  double sum = 0.0;
  long n = 0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (mask.bits()[i]) {
      sum += map[i];
      ++n;
    }
  }
  return sum / static_cast<double>(n);
}

double identity_similarity(const Image& a, const Image& b, const FaceEmbedder& embedder) {
  const Eigen::VectorXd ea = embedder.embed(a);
  const Eigen::VectorXd eb = embedder.embed(b);
  if (ea.size() != eb.size()) throw ContractError("identity_similarity: embedding dimensions differ");
  for (const auto* e : {&ea, &eb}) {
    const double norm = e->norm();
    if (norm < 1e-12 || std::abs(norm - 1.0) > 1e-6) {
      throw ContractError("identity_similarity: embedder returned a non-unit embedding");
    }
  }
  return std::clamp(ea.dot(eb), -1.0, 1.0);
}

}  // namespace hsd
