#include "hsd/tensor_util.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <cstring>

#include "hsd/errors.hpp"

namespace hsd {

torch::Generator make_generator(std::uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

torch::Tensor image_to_tensor(const Image& image) {
  const int h = image.height(), w = image.width();
  torch::Tensor hwc = torch::from_blob(const_cast<float*>(image.data().data()), {h, w, 3}, torch::kFloat32);
  return hwc.permute({2, 0, 1}).unsqueeze(0).contiguous();
}

torch::Tensor images_to_tensor(std::span<const Image> images) {
  if (images.empty()) throw ShapeError("images_to_tensor: empty batch");
  std::vector<torch::Tensor> parts;
  parts.reserve(images.size());
  for (const auto& img : images) {
    if (img.width() != images.front().width() || img.height() != images.front().height()) {
      throw ShapeError("images_to_tensor: images differ in size");
    }
    parts.push_back(image_to_tensor(img));
  }
  return torch::cat(parts, 0);
}

Image tensor_to_image(const torch::Tensor& t) {
  torch::Tensor x = t.dim() == 4 ? t.squeeze(0) : t;
  if (x.dim() != 3 || x.size(0) != 3) throw ShapeError("tensor_to_image: expected [1, 3, H, W]");
  x = x.detach().to(torch::kFloat32).clamp(0.0, 1.0).permute({1, 2, 0}).contiguous();
  const int h = static_cast<int>(x.size(0)), w = static_cast<int>(x.size(1));
  std::vector<float> rgb(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * 3);
  std::memcpy(rgb.data(), x.data_ptr<float>(), rgb.size() * sizeof(float));
  return Image(w, h, std::move(rgb));
}

torch::Tensor layouts_to_indices(std::span<const SemanticLayout> layouts) {
  if (layouts.empty()) throw ShapeError("layouts_to_indices: empty batch");
  const int h = layouts.front().height(), w = layouts.front().width();
  torch::Tensor out = torch::empty({static_cast<std::int64_t>(layouts.size()), h, w}, torch::kInt64);
  auto* p = out.data_ptr<std::int64_t>();
  for (const auto& l : layouts) {
    if (l.width() != w || l.height() != h) throw ShapeError("layouts_to_indices: layouts differ in size");
    for (auto c : l.cells()) *p++ = c;
  }
  return out;
}

torch::Tensor one_hot_indices(const torch::Tensor& indices) {
  if (indices.numel() > 0) {
    const auto lo = indices.min().item<std::int64_t>();
    const auto hi = indices.max().item<std::int64_t>();
    if (lo < 0 || hi >= kNumClasses) throw TaxonomyError("one_hot: class index outside taxonomy");
  }
  // [N, H, W] -> [N, 20, H, W]
  return torch::one_hot(indices.to(torch::kInt64), kNumClasses).permute({0, 3, 1, 2}).to(torch::kFloat32).contiguous();
}

torch::Tensor one_hot_layouts(std::span<const SemanticLayout> layouts) { return one_hot_indices(layouts_to_indices(layouts)); }

SemanticLayout indices_to_layout(const torch::Tensor& indices) {
  torch::Tensor x = indices.dim() == 3 ? indices.squeeze(0) : indices;
  if (x.dim() != 2) throw ShapeError("indices_to_layout: expected [H, W]");
  x = x.to(torch::kInt64).contiguous();
  const int h = static_cast<int>(x.size(0)), w = static_cast<int>(x.size(1));
  std::vector<std::uint8_t> cells(static_cast<std::size_t>(h) * static_cast<std::size_t>(w));
  const auto* p = x.data_ptr<std::int64_t>();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (p[i] < 0 || p[i] >= kNumClasses) throw TaxonomyError("indices_to_layout: class index outside taxonomy");
    cells[i] = static_cast<std::uint8_t>(p[i]);
  }
  return SemanticLayout(w, h, std::move(cells));
}

torch::Tensor mask_to_tensor(const Mask& mask) {
  torch::Tensor out = torch::empty({1, 1, mask.height(), mask.width()}, torch::kFloat32);
  auto* p = out.data_ptr<float>();
  for (auto b : mask.bits()) *p++ = b ? 1.0f : 0.0f;
  return out;
}

namespace {

void init_one(torch::nn::Module& m, torch::Generator& gen) {
  torch::Tensor w, b;
  if (auto* conv = m.as<torch::nn::Conv2d>()) {
    w = conv->weight;
    b = conv->bias;
  } else if (auto* lin = m.as<torch::nn::Linear>()) {
    w = lin->weight;
    b = lin->bias;
  } else {
    return;
  }
  const double fan_in = static_cast<double>(w.numel() / w.size(0));
  const double bound = 1.0 / std::sqrt(fan_in);
  w.uniform_(-bound, bound, gen);
  if (b.defined()) b.uniform_(-bound, bound, gen);
}

}  // namespace

void init_parameters(torch::nn::Module& module, torch::Generator& gen) {
  torch::NoGradGuard guard;
  init_one(module, gen);
  for (auto& m : module.modules(/*include_self=*/false)) init_one(*m, gen);
}

void zero_parameters(torch::nn::Module& module) {
  torch::NoGradGuard guard;
  for (auto& p : module.parameters()) p.zero_();
}

TensorRecord tensor_to_record(const std::string& name, const torch::Tensor& t) {
  TensorRecord r;
  r.name = name;
  torch::Tensor c;
  if (t.scalar_type() == torch::kFloat64) {
    r.dtype = DType::kFloat64;
    c = t.detach().contiguous();
  } else if (t.scalar_type() == torch::kInt64) {
    r.dtype = DType::kInt64;
    c = t.detach().contiguous();
  } else {
    r.dtype = DType::kFloat32;
    c = t.detach().to(torch::kFloat32).contiguous();
  }
  for (auto s : c.sizes()) r.shape.push_back(s);
  r.data.resize(static_cast<std::size_t>(c.numel()) * dtype_size(r.dtype));
  std::memcpy(r.data.data(), c.data_ptr(), r.data.size());
  return r;
}

torch::Tensor record_to_tensor(const TensorRecord& r) {
  const auto st = r.dtype == DType::kFloat32 ? torch::kFloat32 : r.dtype == DType::kFloat64 ? torch::kFloat64 : torch::kInt64;
  torch::Tensor t = torch::empty(r.shape, st);
  std::memcpy(t.data_ptr(), r.data.data(), r.data.size());
  return t;
}

void export_module(const torch::nn::Module& module, Checkpoint& ck, const std::string& prefix) {
  for (const auto& p : module.named_parameters(/*recurse=*/true)) ck.add(tensor_to_record(prefix + p.key(), p.value()));
  for (const auto& b : module.named_buffers(/*recurse=*/true)) ck.add(tensor_to_record(prefix + b.key(), b.value()));
}

void import_module(torch::nn::Module& module, const Checkpoint& ck, const std::string& prefix) {
  torch::NoGradGuard guard;
  auto load = [&](const std::string& name, torch::Tensor& dst) {
    const TensorRecord& r = ck.get(prefix + name);
    torch::Tensor src = record_to_tensor(r);
    if (src.sizes() != dst.sizes()) {
      throw ShapeError("checkpoint tensor '" + prefix + name + "' has shape " + c10::str(src.sizes()) +
                       ", module expects " + c10::str(dst.sizes()));
    }
    dst.copy_(src.to(dst.scalar_type()));
  };
  for (auto& p : module.named_parameters(true)) load(p.key(), p.value());
  for (auto& b : module.named_buffers(true)) load(b.key(), b.value());
}

std::int64_t parameter_count(const torch::nn::Module& module) {
  std::int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

}  // namespace hsd
