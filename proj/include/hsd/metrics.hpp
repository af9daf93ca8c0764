#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hsd/image.hpp"
#include "hsd/layout.hpp"

namespace hsd {

/// Maps an image to a fixed-length feature vector (stand-in slot for Inception features).
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual int dim() const = 0;
  virtual std::string id() const = 0;
  virtual Eigen::VectorXd extract(const Image& image) const = 0;
};

/// Maps a face image to a unit-norm embedding (stand-in slot for ArcFace).
class FaceEmbedder {
 public:
  virtual ~FaceEmbedder() = default;
  virtual std::string id() const = 0;
  virtual Eigen::VectorXd embed(const Image& image) const = 0;
};

/// Learned perceptual distance slot (LPIPS). No implementation ships with the library.
class PerceptualDistance {
 public:
  virtual ~PerceptualDistance() = default;
  virtual std::string id() const = 0;
  virtual double distance(const Image& a, const Image& b) const = 0;
};

/// Bilinear resize to 8x8 grayscale, optionally projected to a lower dimension
/// by a fixed Gaussian matrix drawn from `seed`.
class ToyExtractor final : public FeatureExtractor {
 public:
  explicit ToyExtractor(int projected_dim = 16, std::uint64_t seed = 0);
  int dim() const override;
  std::string id() const override;
  Eigen::VectorXd extract(const Image& image) const override;

 private:
  int projected_dim_;
  std::uint64_t seed_;
  Eigen::MatrixXd projection_;
};

/// Upper-centre crop (where portraits keep the head), 8x8 RGB, mean-removed and normalised.
class ToyFaceEmbedder final : public FaceEmbedder {
 public:
  std::string id() const override { return "toy-face-8x8rgb-v1"; }
  Eigen::VectorXd embed(const Image& image) const override;
};

struct FeatureStats {
  long n = 0;
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;  // unbiased covariance
};

Image resize_bilinear(const Image& image, int out_w, int out_h);

/// Mean and unbiased covariance. Rows are sorted before accumulation so the
/// result does not depend on input order.
FeatureStats stats_from_features(std::vector<Eigen::VectorXd> features);
FeatureStats compute_stats(std::span<const Image> images, const FeatureExtractor& extractor);

/// Pairwise combination of partial statistics (Chan et al. update).
FeatureStats merge_stats(const FeatureStats& a, const FeatureStats& b);

double frechet_distance(const FeatureStats& a, const FeatureStats& b);

double fid(std::span<const Image> set_a, std::span<const Image> set_b, const FeatureExtractor& extractor);

/// Head and body pixels of every image are blacked out (each set masked by its own layouts), then FID.
double mask_fid(std::span<const Image> results, std::span<const Image> refs,
                std::span<const SemanticLayout> result_layouts, std::span<const SemanticLayout> ref_layouts,
                const FeatureExtractor& extractor);

/// Central H/2 x W/2 window.
Image focal_crop(const Image& image);
double focal_fid(std::span<const Image> results, std::span<const Image> refs, const FeatureExtractor& extractor);

/// Per-pixel SSIM averaged over the colour channels (11x11 Gaussian, sigma 1.5,
/// K1 = 0.01, K2 = 0.03, L = 1, reflected borders). Row-major H*W.
std::vector<double> ssim_map(const Image& a, const Image& b);
double masked_ssim(const Image& a, const Image& b, const Mask& mask);

double identity_similarity(const Image& a, const Image& b, const FaceEmbedder& embedder);

}  // namespace hsd
