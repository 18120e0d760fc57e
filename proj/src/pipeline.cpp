#include "r2diff/pipeline.hpp"

#include <cmath>
#include <functional>
#include <memory>

#include "r2diff/error.hpp"

namespace r2diff {

std::string to_string(InferenceMode m) {
  switch (m) {
    case InferenceMode::rand: return "rand";
    case InferenceMode::ret_ste: return "ret-ste";
    case InferenceMode::ret_mse: return "ret-mse";
    case InferenceMode::ret_cheat: return "ret-cheat";
  }
  return "rand";
}

InferenceMode parse_inference_mode(const std::string& s) {
  if (s == "rand") return InferenceMode::rand;
  if (s == "ret-ste" || s == "ret") return InferenceMode::ret_ste;
  if (s == "ret-mse") return InferenceMode::ret_mse;
  if (s == "ret-cheat") return InferenceMode::ret_cheat;
  throw InvalidConfig("unknown inference mode '" + s +
                      "' (expected rand, ret-ste, ret-mse or ret-cheat)");
}

void InferenceConfig::validate(const NoiseSchedule& s) const {
  if (steps != s.steps()) {
    throw InvalidConfig("inference N=" + std::to_string(steps) + " but the schedule has N=" +
                        std::to_string(s.steps()));
  }
  if (n_start > steps) {
    throw InvalidConfig("n_start=" + std::to_string(n_start) + " exceeds N=" +
                        std::to_string(steps));
  }
  weights.validate();
}

std::mt19937_64 query_rng(std::uint64_t seed, std::uint64_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id), static_cast<std::uint32_t>(id >> 32),
                    0x696e6672u};
  return std::mt19937_64(seq);
}

namespace {

void fill_normal(std::vector<double>& out, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& x : out) x = normal(rng);
}

void check_finite(const Motion& m, std::size_t n) {
  for (double x : m.flat()) {
    if (!std::isfinite(x)) {
      throw InferenceDiverged("inference produced a non-finite state at step n=" +
                              std::to_string(n));
    }
  }
}

class Retriever {
 public:
  Retriever(const MotionDataset& ds, const InferenceConfig& cfg) : ds_(ds), cfg_(cfg) {
    if (cfg.mode == InferenceMode::ret_ste) ste_ = std::make_unique<SteIndex>(ds, cfg.similarity_guard);
  }

  RetrievalResult operator()(const InferenceQuery& q) const {
    switch (cfg_.mode) {
      case InferenceMode::ret_ste: return ste_->retrieve(*q.scene);
      case InferenceMode::ret_mse: return retrieve_mse(*q.scene, ds_);
      case InferenceMode::ret_cheat:
        if (q.gt_motion == nullptr) {
          throw InvalidInput("ret-cheat needs the query's ground-truth motion");
        }
        return retrieve_cheat(*q.gt_motion, ds_, cfg_.weights);
      case InferenceMode::rand: break;
    }
    throw InvalidInput("rand mode does not retrieve");
  }

 private:
  const MotionDataset& ds_;
  const InferenceConfig& cfg_;
  std::unique_ptr<SteIndex> ste_;
};

std::vector<InferenceResult> run(const NoisePredictor& model, const NoiseSchedule& s,
                                 std::span<const InferenceQuery> queries, const MotionDataset& ds,
                                 const InferenceConfig& cfg,
                                 const std::function<std::mt19937_64&(std::size_t)>& rng_of) {
  cfg.validate(s);
  if (ds.size() == 0) throw InvalidInput("inference needs a non-empty dataset");
  const std::size_t T = ds.meta.timesteps;
  const std::size_t dm = T * kStateDim;
  const std::size_t start = cfg.effective_start();
  const std::size_t B = queries.size();

  std::vector<InferenceResult> results(B);
  std::vector<Motion> state(B);
  std::vector<double> noise(dm);
  const Retriever retriever(ds, cfg);
  for (std::size_t b = 0; b < B; ++b) {
    if (queries[b].scene == nullptr) throw InvalidInput("query without a scene field");
    if (!queries[b].scene->same_shape(ds.scene(0))) {
      throw InvalidInput("query scene shape differs from the dataset's scenes");
    }
    std::mt19937_64& rng = rng_of(b);
    if (cfg.mode == InferenceMode::rand) {
      fill_normal(noise, rng);
      state[b] = Motion(noise);
    } else {
      const RetrievalResult r = retriever(queries[b]);
      results[b].retrieval = r;
      const Motion& m0 = ds.motion(r.index);
      if (start == 0) {
        state[b] = m0;
      } else {
        fill_normal(noise, rng);
        state[b] = forward_noise(m0, start, noise, s);
      }
    }
  }

  std::vector<STEFeature> feats(B);
  std::vector<std::size_t> steps(B);
  const std::vector<double> zeros(dm, 0.0);
  for (std::size_t n = start; n >= 1; --n) {
    for (std::size_t b = 0; b < B; ++b) {
      feats[b] = ste_extract(*queries[b].scene, state[b]);
      steps[b] = n;
    }
    const auto eps_hat = model.predict_batch(state, feats, steps);
    for (std::size_t b = 0; b < B; ++b) {
      if (n > 1) {
        fill_normal(noise, rng_of(b));
        state[b] = reverse_step(state[b], eps_hat[b], n, s, noise);
      } else {
        state[b] = reverse_step(state[b], eps_hat[b], n, s, zeros);
      }
      check_finite(state[b], n);
    }
  }
  for (std::size_t b = 0; b < B; ++b) results[b].motion = std::move(state[b]);
  return results;
}

}  // namespace

InferenceResult infer(const NoisePredictor& model, const NoiseSchedule& s,
                      const SceneField& query, const MotionDataset& ds,
                      const InferenceConfig& cfg, std::mt19937_64& rng, const Motion* gt_motion) {
  const InferenceQuery q{&query, gt_motion, 0};
  auto out = run(model, s, std::span<const InferenceQuery>(&q, 1), ds, cfg,
                 [&rng](std::size_t) -> std::mt19937_64& { return rng; });
  return std::move(out.front());
}

std::vector<InferenceResult> infer_batch(const NoisePredictor& model, const NoiseSchedule& s,
                                         std::span<const InferenceQuery> queries,
                                         const MotionDataset& ds, const InferenceConfig& cfg) {
  std::vector<std::mt19937_64> rngs;
  rngs.reserve(queries.size());
  for (const auto& q : queries) rngs.push_back(query_rng(cfg.seed, q.id));
  return run(model, s, queries, ds, cfg,
             [&rngs](std::size_t b) -> std::mt19937_64& { return rngs[b]; });
}

}  // namespace r2diff
