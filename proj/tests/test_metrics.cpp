#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "hsd/errors.hpp"
#include "hsd/metrics.hpp"
#include "test_support.hpp"

using namespace hsd;
using hsd::testing::random_image;

namespace {

class ConstantExtractor final : public FeatureExtractor {
 public:
  int dim() const override { return 3; }
  std::string id() const override { return "const"; }
  Eigen::VectorXd extract(const Image&) const override { return Eigen::Vector3d(1.0, -2.0, 0.5); }
};

// Returns a preset vector per image, keyed by the first pixel value.
class TableEmbedder final : public FaceEmbedder {
 public:
  std::map<float, Eigen::VectorXd> table;
  std::string id() const override { return "table"; }
  Eigen::VectorXd embed(const Image& image) const override { return table.at(image.data()[0]); }
};

FeatureStats stats_1d(double mu, double var) {
  FeatureStats s;
  s.n = 10;
  s.mu = Eigen::VectorXd::Constant(1, mu);
  s.sigma = Eigen::MatrixXd::Constant(1, 1, var);
  return s;
}

FeatureStats random_stats(std::mt19937_64& rng, int d) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd a(d, d + 2);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d + 2; ++j) a(i, j) = n(rng);
  }
  FeatureStats s;
  s.n = 50;
  s.mu = Eigen::VectorXd(d);
  for (int i = 0; i < d; ++i) s.mu(i) = n(rng);
  s.sigma = a * a.transpose() / (d + 2);
  return s;
}

Image constant_image(int w, int h, float r, float g, float b) {
  Image img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      img.at(x, y, 0) = r;
      img.at(x, y, 1) = g;
      img.at(x, y, 2) = b;
    }
  }
  return img;
}

// Direct windowed SSIM per pixel, no separable filtering.
double ssim_oracle(const Image& a, const Image& b, int px, int py) {
  const double c1 = 1e-4, c2 = 9e-4;
  auto refl = [](int i, int n) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return i;
  };
  double wsum = 0.0;
  double w[11][11];
  for (int dy = -5; dy <= 5; ++dy) {
    for (int dx = -5; dx <= 5; ++dx) {
      w[dy + 5][dx + 5] = std::exp(-(dx * dx + dy * dy) / (2 * 1.5 * 1.5));
      wsum += w[dy + 5][dx + 5];
    }
  }
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
    for (int dy = -5; dy <= 5; ++dy) {
      for (int dx = -5; dx <= 5; ++dx) {
        const double wt = w[dy + 5][dx + 5] / wsum;
        const int x = refl(px + dx, a.width()), y = refl(py + dy, a.height());
        const double va = a.at(x, y, c), vb = b.at(x, y, c);
        ma += wt * va;
        mb += wt * vb;
        saa += wt * va * va;
        sbb += wt * vb * vb;
        sab += wt * va * vb;
      }
    }
    const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
    total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return total / 3.0;
}

}  // namespace

TEST_CASE("compute_stats matches a two-pass oracle") {
  std::mt19937_64 rng(1);
  std::vector<Image> images;
  for (int i = 0; i < 12; ++i) images.push_back(random_image(rng, 16, 16));
  ToyExtractor ex(0);
  FeatureStats s = compute_stats(images, ex);
  CHECK(s.n == 12);

  const int d = ex.dim();
  std::vector<std::vector<double>> f;
  for (const auto& img : images) {
    Eigen::VectorXd v = ex.extract(img);
    f.emplace_back(v.data(), v.data() + v.size());
  }
  for (int i = 0; i < d; ++i) {
    double m = 0;
    for (const auto& row : f) m += row[static_cast<std::size_t>(i)];
    m /= 12.0;
    CHECK(s.mu(i) == doctest::Approx(m).epsilon(1e-12));
  }
  for (int i = 0; i < d; i += 7) {
    for (int j = 0; j < d; j += 5) {
      double mi = 0, mj = 0;
      for (const auto& row : f) {
        mi += row[static_cast<std::size_t>(i)];
        mj += row[static_cast<std::size_t>(j)];
      }
      mi /= 12.0;
      mj /= 12.0;
      double c = 0;
      for (const auto& row : f) c += (row[static_cast<std::size_t>(i)] - mi) * (row[static_cast<std::size_t>(j)] - mj);
      c /= 11.0;
      CHECK(s.sigma(i, j) == doctest::Approx(c).epsilon(1e-10).scale(1.0));
    }
  }
}

TEST_CASE("compute_stats degenerate inputs") {
  std::mt19937_64 rng(2);
  Image img = random_image(rng, 16, 16);
  std::vector<Image> twins{img, img};
  FeatureStats s = compute_stats(twins, ToyExtractor());
  CHECK(s.sigma.cwiseAbs().maxCoeff() == 0.0);

  std::vector<Image> varied{random_image(rng, 8, 8), random_image(rng, 8, 8), random_image(rng, 8, 8)};
  FeatureStats c = compute_stats(varied, ConstantExtractor());
  CHECK(c.mu == Eigen::Vector3d(1.0, -2.0, 0.5));
  CHECK(c.sigma.cwiseAbs().maxCoeff() == 0.0);

  std::vector<Image> one{img};
  CHECK_THROWS_AS(compute_stats(one, ToyExtractor()), InsufficientDataError);
}

TEST_CASE("compute_stats is exactly permutation invariant") {
  std::mt19937_64 rng(3);
  std::vector<Image> images;
  for (int i = 0; i < 20; ++i) images.push_back(random_image(rng, 16, 16));
  ToyExtractor ex;
  FeatureStats ref = compute_stats(images, ex);
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(images.begin(), images.end(), rng);
    FeatureStats s = compute_stats(images, ex);
    CHECK(s.mu == ref.mu);
    CHECK(s.sigma == ref.sigma);
  }
}

TEST_CASE("merge_stats combines partial statistics") {
  std::mt19937_64 rng(4);
  std::vector<Image> images;
  for (int i = 0; i < 15; ++i) images.push_back(random_image(rng, 16, 16));
  ToyExtractor ex;
  FeatureStats all = compute_stats(images, ex);
  FeatureStats a = compute_stats(std::span(images).subspan(0, 6), ex);
  FeatureStats b = compute_stats(std::span(images).subspan(6), ex);
  FeatureStats m = merge_stats(a, b);
  CHECK(m.n == 15);
  CHECK((m.mu - all.mu).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((m.sigma - all.sigma).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("frechet_distance closed forms") {
  CHECK(frechet_distance(stats_1d(0, 1), stats_1d(3, 1)) == doctest::Approx(9.0).epsilon(1e-12));
  CHECK(std::abs(frechet_distance(stats_1d(0, 1), stats_1d(3, 1)) - 9.0) < 1e-9);
  CHECK(std::abs(frechet_distance(stats_1d(0, 1), stats_1d(0, 4)) - 1.0) < 1e-9);

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    FeatureStats a = random_stats(rng, 6);
    FeatureStats b = random_stats(rng, 6);
    CHECK(std::abs(frechet_distance(a, a)) < 1e-8);
    CHECK(frechet_distance(a, b) == doctest::Approx(frechet_distance(b, a)).epsilon(1e-9));
    CHECK(frechet_distance(a, b) >= 0.0);

    // Independent route: eigenvalues of the (non-symmetric) product.
    Eigen::EigenSolver<Eigen::MatrixXd> es(a.sigma * b.sigma);
    double tr = 0.0;
    for (int i = 0; i < 6; ++i) tr += std::sqrt(std::max(0.0, es.eigenvalues()(i).real()));
    const double oracle = (a.mu - b.mu).squaredNorm() + a.sigma.trace() + b.sigma.trace() - 2 * tr;
    CHECK(frechet_distance(a, b) == doctest::Approx(oracle).epsilon(1e-8));
  }

  // Diagonal covariances: sum of 1-D closed forms.
  FeatureStats d1, d2;
  d1.n = d2.n = 5;
  d1.mu = Eigen::Vector3d(0, 1, 2);
  d2.mu = Eigen::Vector3d(1, 1, 0);
  d1.sigma = Eigen::Vector3d(1, 4, 9).asDiagonal();
  d2.sigma = Eigen::Vector3d(4, 4, 1).asDiagonal();
  CHECK(std::abs(frechet_distance(d1, d2) - (1 + 0 + 4 + 1 + 0 + 4)) < 1e-9);
}

TEST_CASE("frechet_distance rejects malformed covariances") {
  FeatureStats a = stats_1d(0, 1);
  FeatureStats b;
  b.n = 3;
  b.mu = Eigen::Vector2d(0, 0);
  b.sigma = Eigen::Matrix2d::Identity();
  CHECK_THROWS_AS(frechet_distance(a, b), ShapeError);
  FeatureStats asym = b;
  asym.sigma(0, 1) = 0.5;
  CHECK_THROWS_AS(frechet_distance(asym, b), NumericalError);
  FeatureStats indef = b;
  indef.sigma(1, 1) = -0.1;
  CHECK_THROWS_AS(frechet_distance(indef, b), NumericalError);
  FeatureStats tiny_neg = b;
  tiny_neg.sigma(1, 1) = -1e-9;
  CHECK_NOTHROW(frechet_distance(tiny_neg, b));
}

TEST_CASE("fid") {
  std::mt19937_64 rng(6);
  std::vector<Image> a, b;
  for (int i = 0; i < 10; ++i) a.push_back(random_image(rng, 32, 32));
  for (int i = 0; i < 10; ++i) b.push_back(random_image(rng, 32, 32));
  ToyExtractor ex;
  CHECK(std::abs(fid(a, a, ex)) < 1e-8);
  CHECK(std::abs(fid(a, b, ex) - fid(b, a, ex)) < 1e-9);

  // Constant-colour sets have degenerate stats: distance is the squared mean gap.
  ToyExtractor raw(0);
  std::vector<Image> ca(4, constant_image(16, 16, 0.2f, 0.4f, 0.6f));
  std::vector<Image> cb(4, constant_image(16, 16, 0.9f, 0.1f, 0.3f));
  const double ga = 0.299 * 0.2 + 0.587 * 0.4 + 0.114 * 0.6;
  const double gb = 0.299 * 0.9 + 0.587 * 0.1 + 0.114 * 0.3;
  CHECK(fid(ca, cb, raw) == doctest::Approx(64.0 * (ga - gb) * (ga - gb)).epsilon(1e-5));
}

TEST_CASE("mask_fid") {
  std::mt19937_64 rng(7);
  std::vector<Image> a, b;
  std::vector<SemanticLayout> la, lb;
  SemanticLayout head(32, 32);
  for (int y = 0; y < 12; ++y) {
    for (int x = 10; x < 22; ++x) head.set(x, y, kFace);
  }
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (int i = 0; i < 10; ++i) {
    Image base = random_image(rng, 32, 32);
    Image other = base;
    for (int y = 0; y < 12; ++y) {
      for (int x = 10; x < 22; ++x) {
        for (int c = 0; c < 3; ++c) other.at(x, y, c) = u(rng) * 0.3f + 0.7f;
      }
    }
    a.push_back(base);
    b.push_back(other);
    la.push_back(head);
    lb.push_back(head);
  }
  ToyExtractor ex;
  CHECK(fid(a, b, ex) > 1e-3);
  CHECK(mask_fid(a, b, la, lb, ex) < 1e-8);

  std::vector<SemanticLayout> empty(10, SemanticLayout(32, 32));
  CHECK(mask_fid(a, b, empty, empty, ex) == doctest::Approx(fid(a, b, ex)).epsilon(1e-12));

  std::vector<SemanticLayout> full(10, SemanticLayout(32, 32, kUpperClothes));
  CHECK(std::abs(mask_fid(a, b, full, full, ex)) < 1e-8);

  std::vector<SemanticLayout> short_list(9, head);
  CHECK_THROWS_AS(mask_fid(a, b, short_list, lb, ex), PairingError);
}

TEST_CASE("focal_fid") {
  Image img(64, 64);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) img.at(x, y, 0) = static_cast<float>(y * 64 + x) / 4096.0f;
  }
  Image crop = focal_crop(img);
  CHECK(crop.width() == 32);
  CHECK(crop.height() == 32);
  CHECK(crop.at(0, 0, 0) == img.at(16, 16, 0));
  CHECK(crop.at(31, 31, 0) == img.at(47, 47, 0));

  std::mt19937_64 rng(8);
  std::vector<Image> a, b;
  for (int i = 0; i < 6; ++i) {
    Image x = random_image(rng, 64, 64);
    Image y = random_image(rng, 64, 64);
    const float v = 0.1f * static_cast<float>(i);
    for (int yy = 16; yy < 48; ++yy) {
      for (int xx = 16; xx < 48; ++xx) {
        for (int c = 0; c < 3; ++c) x.at(xx, yy, c) = y.at(xx, yy, c) = v;
      }
    }
    a.push_back(x);
    b.push_back(y);
  }
  ToyExtractor ex;
  CHECK(std::abs(focal_fid(a, b, ex)) < 1e-8);
  CHECK(std::abs(focal_fid(a, a, ex)) < 1e-8);
  CHECK(fid(a, b, ex) > 1e-4);

  std::vector<Image> odd(2, Image(63, 64));
  CHECK_THROWS_AS(focal_fid(odd, odd, ex), ShapeError);
}

TEST_CASE("masked_ssim") {
  std::mt19937_64 rng(9);
  Image a = random_image(rng, 24, 20);
  Image b = random_image(rng, 24, 20);
  Mask full(24, 20, true);
  CHECK(masked_ssim(a, a, full) == doctest::Approx(1.0).epsilon(1e-12));

  const auto map = ssim_map(a, b);
  double mean = 0;
  for (double v : map) mean += v;
  mean /= static_cast<double>(map.size());
  CHECK(masked_ssim(a, b, full) == doctest::Approx(mean).epsilon(1e-12));

  Mask m = hsd::testing::random_mask(rng, 24, 20, 0.3);
  double sum = 0;
  int n = 0;
  for (int y = 0; y < 20; ++y) {
    for (int x = 0; x < 24; ++x) {
      if (!m.at(x, y)) continue;
      sum += ssim_oracle(a, b, x, y);
      ++n;
    }
  }
  CHECK(masked_ssim(a, b, m) == doctest::Approx(sum / n).epsilon(1e-9));
  const double s = masked_ssim(a, b, m);
  CHECK(s >= -1.0);
  CHECK(s <= 1.0);

  CHECK_THROWS_AS(masked_ssim(a, b, Mask(24, 20)), InsufficientDataError);
  CHECK_THROWS_AS(masked_ssim(a, Image(4, 4), full), ShapeError);
}

TEST_CASE("identity_similarity") {
  std::mt19937_64 rng(10);
  ToyFaceEmbedder toy;
  Image a = random_image(rng, 32, 32);
  CHECK(identity_similarity(a, a, toy) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(toy.embed(constant_image(32, 32, 0.5f, 0.5f, 0.5f)), ContractError);

  TableEmbedder table;
  Eigen::VectorXd e(4);
  e << 0.5, 0.5, 0.5, 0.5;
  table.table[0.25f] = e;
  table.table[0.75f] = -e;
  CHECK(identity_similarity(constant_image(4, 4, 0.25f, 0, 0), constant_image(4, 4, 0.75f, 0, 0), table) ==
        doctest::Approx(-1.0));

  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::VectorXd u(8), v(8);
    for (int i = 0; i < 8; ++i) {
      u(i) = n(rng);
      v(i) = n(rng);
    }
    u.normalize();
    v.normalize();
    table.table[0.25f] = u;
    table.table[0.75f] = v;
    double dot = 0;
    for (int i = 0; i < 8; ++i) dot += u(i) * v(i);
    CHECK(identity_similarity(constant_image(4, 4, 0.25f, 0, 0), constant_image(4, 4, 0.75f, 0, 0), table) ==
          doctest::Approx(dot).epsilon(1e-12));
  }
  table.table[0.25f] = Eigen::VectorXd::Zero(8);
  CHECK_THROWS_AS(
      identity_similarity(constant_image(4, 4, 0.25f, 0, 0), constant_image(4, 4, 0.75f, 0, 0), table),
      ContractError);
}
