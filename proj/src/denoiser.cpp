#include "r2diff/denoiser.hpp"

#include <algorithm>
#include <cmath>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "binary_io.hpp"
#include "r2diff/autodiff.hpp"
#include "r2diff/error.hpp"

namespace r2diff {

std::vector<double> embed_timestep(double n, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) {
    throw InvalidConfig("timestep embedding size must be even, got " + std::to_string(dim));
  }
  std::vector<double> out(dim);
  for (std::size_t k = 0; k < dim / 2; ++k) {
    const double freq =
        std::pow(10000.0, -static_cast<double>(2 * k) / static_cast<double>(dim));
    out[2 * k] = std::sin(n * freq);
    out[2 * k + 1] = std::cos(n * freq);
  }
  return out;
}

void ArchConfig::validate() const {
  if (timesteps == 0 || feature_channels == 0 || hidden == 0 || blocks == 0 || heads == 0 ||
      ffn_multiplier == 0) {
    throw InvalidConfig("architecture sizes must be positive");
  }
  if (hidden % heads != 0) throw InvalidConfig("hidden width must be divisible by heads");
  if (hidden % 2 != 0) throw InvalidConfig("hidden width must be even for positional encoding");
  if (time_embed == 0 || time_embed % 2 != 0) {
    throw InvalidConfig("timestep embedding size must be even");
  }
  for (double s : input_scale) {
    if (!(s > 0.0) || !std::isfinite(s)) throw InvalidConfig("input scale must be positive");
  }
}

void fit_input_normalization(ArchConfig& arch, const MotionDataset& ds) {
  std::array<double, kStateDim> sum{};
  std::array<double, kStateDim> sum_sq{};
  std::size_t count = 0;
  for (const auto& e : ds.entries) {
    const auto flat = e.motion.flat();
    for (std::size_t d = 0; d < flat.size(); ++d) {
      sum[d % kStateDim] += flat[d];
      sum_sq[d % kStateDim] += flat[d] * flat[d];
    }
    count += e.motion.timesteps();
  }
  if (count == 0) return;
  for (std::size_t k = 0; k < kStateDim; ++k) {
    const double mean = sum[k] / static_cast<double>(count);
    const double var = std::max(0.0, sum_sq[k] / static_cast<double>(count) - mean * mean);
    arch.input_shift[k] = mean;
    arch.input_scale[k] = std::max(std::sqrt(var), 1.0);
  }
}

std::vector<std::vector<double>> NoisePredictor::predict_batch(
    std::span<const Motion> mn, std::span<const STEFeature> feats,
    std::span<const std::size_t> n) const {
  if (mn.size() != feats.size() || mn.size() != n.size()) {
    throw InvalidInput("batch inputs differ in length");
  }
  std::vector<std::vector<double>> out;
  out.reserve(mn.size());
  for (std::size_t i = 0; i < mn.size(); ++i) out.push_back(predict(mn[i], feats[i], n[i]));
  return out;
}

namespace {

void add_block(std::vector<ParameterBlock>& blocks, std::size_t& offset, std::string name,
               std::size_t rows, std::size_t cols) {
  blocks.push_back({std::move(name), offset, rows, cols});
  offset += rows * cols;
}

std::vector<ParameterBlock> make_registry(const ArchConfig& a) {
  std::vector<ParameterBlock> b;
  std::size_t off = 0;
  const std::size_t h = a.hidden;
  const std::size_t f = a.hidden * a.ffn_multiplier;
  add_block(b, off, "state_in.w", kStateDim, h);
  add_block(b, off, "state_in.b", 1, h);
  add_block(b, off, "feat_in.w", a.feature_channels, h);
  add_block(b, off, "time.w1", a.time_embed, h);
  add_block(b, off, "time.b1", 1, h);
  add_block(b, off, "time.w2", h, h);
  add_block(b, off, "time.b2", 1, h);
  for (std::size_t l = 0; l < a.blocks; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    add_block(b, off, p + "ln1.g", 1, h);
    add_block(b, off, p + "ln1.b", 1, h);
    add_block(b, off, p + "qkv.w", h, 3 * h);
    add_block(b, off, p + "qkv.b", 1, 3 * h);
    add_block(b, off, p + "out.w", h, h);
    add_block(b, off, p + "out.b", 1, h);
    add_block(b, off, p + "ln2.g", 1, h);
    add_block(b, off, p + "ln2.b", 1, h);
    add_block(b, off, p + "ffn.w1", h, f);
    add_block(b, off, p + "ffn.b1", 1, f);
    add_block(b, off, p + "ffn.w2", f, h);
    add_block(b, off, p + "ffn.b2", 1, h);
  }
  add_block(b, off, "final_ln.g", 1, h);
  add_block(b, off, "final_ln.b", 1, h);
  add_block(b, off, "head.w", h, kStateDim);
  add_block(b, off, "head.b", 1, kStateDim);
  return b;
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::size_t parameter_count(const ArchConfig& arch) {
  const auto reg = make_registry(arch);
  return reg.back().offset + reg.back().size();
}

void DenoiserModel::build_registry() {
  blocks_ = make_registry(arch_);
  params_.assign(blocks_.back().offset + blocks_.back().size(), 0.0);
}

DenoiserModel::DenoiserModel(const ArchConfig& arch, std::uint64_t seed) : arch_(arch) {
  arch_.validate();
  build_registry();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double residual_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(arch_.blocks));
  for (const auto& blk : blocks_) {
    double* p = params_.data() + blk.offset;
    if (ends_with(blk.name, ".g")) {
      std::fill(p, p + blk.size(), 1.0);
    } else if (ends_with(blk.name, ".b") || ends_with(blk.name, ".b1") ||
               ends_with(blk.name, ".b2") || blk.name == "head.w") {
      // Biases and the output head start at zero; the model initially predicts no noise.
      std::fill(p, p + blk.size(), 0.0);
    } else {
      double stddev = 1.0 / std::sqrt(static_cast<double>(blk.rows));
      if (ends_with(blk.name, "out.w") || ends_with(blk.name, "ffn.w2")) stddev *= residual_scale;
      for (std::size_t k = 0; k < blk.size(); ++k) p[k] = stddev * normal(rng);
    }
  }
}

const ParameterBlock& DenoiserModel::block(const std::string& name) const {
  for (const auto& b : blocks_) {
    if (b.name == name) return b;
  }
  throw InvalidInput("no parameter block named '" + name + "'");
}

namespace {

template <typename Scalar>
struct ForwardGraph {
  ad::Tape<Scalar> tape;
  ad::Var output;  // (B*T) x 10, row b*T + t holds the noise for timestep t of item b

  explicit ForwardGraph(bool record) : tape(record) {}
};

template <typename Scalar>
class GraphBuilder {
 public:
  using Mat = ad::Matrix<Scalar>;

  GraphBuilder(const DenoiserModel& model, ad::Tape<Scalar>& tape)
      : model_(model), arch_(model.arch()), tape_(tape) {}

  ad::Var param(const std::string& name) {
    const ParameterBlock& b = model_.block(name);
    Mat m(b.rows, b.cols);
    const double* src = model_.parameters().data() + b.offset;
    for (std::size_t k = 0; k < b.size(); ++k) m.data()[k] = static_cast<Scalar>(src[k]);
    return tape_.parameter(b.offset, std::move(m));
  }

  ad::Var linear(ad::Var x, const std::string& prefix, bool bias = true) {
    ad::Var y = tape_.matmul(x, param(prefix + ".w"));
    return bias ? tape_.add_row(y, param(prefix + ".b")) : y;
  }

  ad::Var build(std::span<const Motion> mn, std::span<const STEFeature> feats,
                std::span<const std::size_t> steps) {
    const std::size_t batch = mn.size();
    const std::size_t T = arch_.timesteps;
    const std::size_t C = arch_.feature_channels;
    const std::size_t h = arch_.hidden;
    if (feats.size() != batch || steps.size() != batch) {
      throw InvalidInput("batch inputs differ in length");
    }

    Mat states(batch * T, kStateDim);
    Mat features(batch * T, C);
    Mat positional(batch * T, h);
    Mat step_embed(batch, arch_.time_embed);
    const Mat pe = positional_table();
    for (std::size_t b = 0; b < batch; ++b) {
      if (mn[b].timesteps() != T) {
        throw InvalidInput("motion has T=" + std::to_string(mn[b].timesteps()) +
                           " but the model expects T=" + std::to_string(T));
      }
      if (feats[b].timesteps != T || feats[b].channels != C) {
        throw InvalidInput("conditioning features do not match the motion's T x C");
      }
      const auto flat = mn[b].flat();
      for (std::size_t t = 0; t < T; ++t) {
        const auto row = static_cast<Eigen::Index>(b * T + t);
        for (std::size_t k = 0; k < kStateDim; ++k) {
          states(row, static_cast<Eigen::Index>(k)) = static_cast<Scalar>(
              (flat[t * kStateDim + k] - arch_.input_shift[k]) / arch_.input_scale[k]);
        }
        for (std::size_t c = 0; c < C; ++c) {
          features(row, static_cast<Eigen::Index>(c)) = static_cast<Scalar>(feats[b].at(t, c));
        }
      }
      positional.middleRows(static_cast<Eigen::Index>(b * T), static_cast<Eigen::Index>(T)) = pe;
      const auto e = embed_timestep(static_cast<double>(steps[b]), arch_.time_embed);
      for (std::size_t k = 0; k < e.size(); ++k) {
        step_embed(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(k)) =
            static_cast<Scalar>(e[k]);
      }
    }

    ad::Var tokens = tape_.add(linear(tape_.constant(std::move(states)), "state_in"),
                               linear(tape_.constant(std::move(features)), "feat_in", false));
    tokens = tape_.add(tokens, tape_.constant(std::move(positional)));

    ad::Var time = tape_.gelu(
        linear_named(tape_.constant(std::move(step_embed)), "time.w1", "time.b1"));
    time = linear_named(time, "time.w2", "time.b2");

    ad::Var x = tape_.append_rows(tokens, time, T);
    for (std::size_t l = 0; l < arch_.blocks; ++l) {
      const std::string p = "block" + std::to_string(l) + ".";
      ad::Var y = tape_.layer_norm(x, param(p + "ln1.g"), param(p + "ln1.b"));
      y = linear(y, p + "qkv");
      y = tape_.attention(y, T + 1, arch_.heads);
      y = linear(y, p + "out");
      x = tape_.add(x, y);
      y = tape_.layer_norm(x, param(p + "ln2.g"), param(p + "ln2.b"));
      y = tape_.gelu(linear_named(y, p + "ffn.w1", p + "ffn.b1"));
      y = linear_named(y, p + "ffn.w2", p + "ffn.b2");
      x = tape_.add(x, y);
    }
    x = tape_.drop_last_rows(x, T);
    x = tape_.layer_norm(x, param("final_ln.g"), param("final_ln.b"));
    return linear(x, "head");
  }

 private:
  ad::Var linear_named(ad::Var x, const std::string& w, const std::string& b) {
    return tape_.add_row(tape_.matmul(x, param(w)), param(b));
  }

  Mat positional_table() const {
    const std::size_t T = arch_.timesteps;
    Mat pe(T, arch_.hidden);
    for (std::size_t t = 0; t < T; ++t) {
      const auto e = embed_timestep(static_cast<double>(t), arch_.hidden);
      for (std::size_t k = 0; k < e.size(); ++k) {
        pe(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) = static_cast<Scalar>(e[k]);
      }
    }
    return pe;
  }

  const DenoiserModel& model_;
  const ArchConfig& arch_;
  ad::Tape<Scalar>& tape_;
};

constexpr std::size_t kInferenceChunk = 32;

// Every forward pass allocates and frees a few MB of activations; glibc's
// defaults hand those straight back to the kernel each time.
void tune_allocator() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
    mallopt(M_TOP_PAD, 64 << 20);
    return true;
  }();
  (void)done;
#endif
}

template <typename Scalar>
void predict_chunk(const DenoiserModel& model, std::span<const Motion> mn,
                   std::span<const STEFeature> feats, std::span<const std::size_t> n,
                   std::vector<std::vector<double>>& out) {
  ad::Tape<Scalar> tape(false);
  GraphBuilder<Scalar> builder(model, tape);
  const ad::Var y = builder.build(mn, feats, n);
  const auto& Y = tape.value(y);
  const std::size_t dm = model.arch().motion_dim();
  for (std::size_t b = 0; b < mn.size(); ++b) {
    std::vector<double> eps(dm);
    const Scalar* src = Y.data() + b * dm;
    for (std::size_t d = 0; d < dm; ++d) eps[d] = static_cast<double>(src[d]);
    out.push_back(std::move(eps));
  }
}

template <typename Scalar>
double loss_and_gradient_impl(const DenoiserModel& model, std::span<const Motion> mn,
                              std::span<const STEFeature> feats, std::span<const std::size_t> n,
                              std::span<const std::vector<double>> targets, double scale,
                              std::span<double> grad) {
  ad::Tape<Scalar> tape(true);
  GraphBuilder<Scalar> builder(model, tape);
  const ad::Var y = builder.build(mn, feats, n);
  const std::size_t dm = model.arch().motion_dim();
  ad::Matrix<Scalar> target(static_cast<Eigen::Index>(mn.size() * model.arch().timesteps),
                            static_cast<Eigen::Index>(kStateDim));
  for (std::size_t b = 0; b < mn.size(); ++b) {
    if (targets[b].size() != dm) throw InvalidInput("target length differs from d_m");
    for (std::size_t d = 0; d < dm; ++d) target.data()[b * dm + d] = static_cast<Scalar>(targets[b][d]);
  }
  const ad::Var loss = tape.squared_error(y, target, static_cast<Scalar>(scale));
  std::vector<Scalar> g(grad.size(), Scalar(0));
  tape.backward(loss, g);
  for (std::size_t k = 0; k < grad.size(); ++k) grad[k] = static_cast<double>(g[k]);
  return static_cast<double>(tape.value(loss)(0, 0));
}

}  // namespace

std::vector<std::vector<double>> DenoiserModel::predict_batch(
    std::span<const Motion> mn, std::span<const STEFeature> feats,
    std::span<const std::size_t> n) const {
  if (mn.size() != feats.size() || mn.size() != n.size()) {
    throw InvalidInput("batch inputs differ in length");
  }
  tune_allocator();
  std::vector<std::vector<double>> out;
  out.reserve(mn.size());
  for (std::size_t start = 0; start < mn.size(); start += kInferenceChunk) {
    const std::size_t len = std::min(kInferenceChunk, mn.size() - start);
    if (precision_ == Precision::float64) {
      predict_chunk<double>(*this, mn.subspan(start, len), feats.subspan(start, len),
                            n.subspan(start, len), out);
    } else {
      predict_chunk<float>(*this, mn.subspan(start, len), feats.subspan(start, len),
                           n.subspan(start, len), out);
    }
  }
  return out;
}

std::vector<double> DenoiserModel::predict(const Motion& mn, const STEFeature& feats,
                                           std::size_t n) const {
  const std::size_t steps[] = {n};
  return predict_batch(std::span<const Motion>(&mn, 1), std::span<const STEFeature>(&feats, 1),
                       steps)
      .front();
}

double DenoiserModel::loss_and_gradient(std::span<const Motion> mn,
                                        std::span<const STEFeature> feats,
                                        std::span<const std::size_t> n,
                                        std::span<const std::vector<double>> targets,
                                        double scale, std::span<double> grad) const {
  if (grad.size() != params_.size()) throw InvalidInput("gradient buffer has the wrong size");
  if (targets.size() != mn.size()) throw InvalidInput("one target per batch item required");
  tune_allocator();
  if (precision_ == Precision::float64) {
    return loss_and_gradient_impl<double>(*this, mn, feats, n, targets, scale, grad);
  }
  return loss_and_gradient_impl<float>(*this, mn, feats, n, targets, scale, grad);
}

namespace {

constexpr std::string_view kCheckpointMagic = "R2DM";
constexpr std::uint32_t kCheckpointVersion = 1;

ArchConfig parse_arch(detail::ByteReader& in) {
  in.expect_magic(kCheckpointMagic);
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("'" + in.name() + "' has unsupported checkpoint version " +
                      std::to_string(version));
  }
  ArchConfig a;
  a.timesteps = in.u32();
  a.feature_channels = in.u32();
  a.hidden = in.u32();
  a.blocks = in.u32();
  a.heads = in.u32();
  a.time_embed = in.u32();
  a.ffn_multiplier = in.u32();
  for (auto& v : a.input_shift) v = in.f32();
  for (auto& v : a.input_scale) v = in.f32();
  a.validate();
  return a;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const DenoiserModel& model) {
  const ArchConfig& a = model.arch();
  detail::ByteWriter out;
  out.magic(kCheckpointMagic);
  out.u32(kCheckpointVersion);
  for (std::size_t v : {a.timesteps, a.feature_channels, a.hidden, a.blocks, a.heads,
                        a.time_embed, a.ffn_multiplier}) {
    out.u32(static_cast<std::uint32_t>(v));
  }
  for (double v : a.input_shift) out.f32(static_cast<float>(v));
  for (double v : a.input_scale) out.f32(static_cast<float>(v));
  out.u32(static_cast<std::uint32_t>(model.parameter_count()));
  for (double p : model.parameters()) out.f32(static_cast<float>(p));
  out.save(path);
}

ArchConfig read_checkpoint_arch(const std::filesystem::path& path) {
  detail::ByteReader in(path);
  return parse_arch(in);
}

DenoiserModel read_checkpoint(const std::filesystem::path& path) {
  detail::ByteReader in(path);
  const ArchConfig arch = parse_arch(in);
  DenoiserModel model(arch, 0);
  const std::uint32_t count = in.u32();
  if (count != model.parameter_count()) {
    throw FormatError("'" + path.string() + "' stores " + std::to_string(count) +
                      " parameters, architecture needs " +
                      std::to_string(model.parameter_count()));
  }
  for (double& p : model.parameters()) p = in.f32();
  if (!in.at_end()) throw FormatError("'" + path.string() + "' has trailing bytes");
  return model;
}

}  // namespace r2diff
