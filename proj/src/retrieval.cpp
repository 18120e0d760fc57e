#include "r2diff/retrieval.hpp"

#include <algorithm>
#include <cmath>

#include "r2diff/error.hpp"

namespace r2diff {

std::string to_string(RetrievalMethod m) {
  switch (m) {
    case RetrievalMethod::ste: return "ste";
    case RetrievalMethod::mse: return "mse";
    case RetrievalMethod::cheat: return "cheat";
  }
  return "ste";
}

void sample_bilinear(const SceneField& field, double u, double v, double* out) {
  const double max_x = static_cast<double>(field.width() - 1);
  const double max_y = static_cast<double>(field.height() - 1);
  // NaN coordinates clamp to the origin instead of propagating.
  const double x = std::isnan(u) ? 0.0 : std::clamp(u, 0.0, max_x);
  const double y = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, max_y);
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const std::size_t x1 = std::min(x0 + 1, field.width() - 1);
  const std::size_t y1 = std::min(y0 + 1, field.height() - 1);
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);
  const double w00 = (1.0 - fx) * (1.0 - fy);
  const double w01 = fx * (1.0 - fy);
  const double w10 = (1.0 - fx) * fy;
  const double w11 = fx * fy;
  for (std::size_t c = 0; c < field.channels(); ++c) {
    out[c] = w00 * field.at(y0, x0, c) + w01 * field.at(y0, x1, c) + w10 * field.at(y1, x0, c) +
             w11 * field.at(y1, x1, c);
  }
}

STEFeature ste_extract(const SceneField& field, const Motion& m) {
  STEFeature f;
  f.timesteps = m.timesteps();
  f.channels = field.channels();
  f.values.resize(f.timesteps * f.channels);
  for (std::size_t t = 0; t < f.timesteps; ++t) {
    sample_bilinear(field, m.u(t), m.v(t), f.values.data() + t * f.channels);
  }
  return f;
}

namespace {

double feature_distance(const STEFeature& a, const STEFeature& b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

void check_query(const SceneField& query, const MotionDataset& ds) {
  if (ds.size() == 0) throw InvalidInput("retrieval from an empty dataset");
  if (!query.same_shape(ds.scene(0))) {
    throw InvalidInput("query scene shape differs from the dataset's scenes");
  }
}

}  // namespace

double ste_similarity(const SceneField& query, const SceneField& train_field,
                      const Motion& train_motion, double guard) {
  if (!query.same_shape(train_field)) throw InvalidInput("scene field shape mismatch");
  const STEFeature f = ste_extract(train_field, train_motion);
  const STEFeature f_query = ste_extract(query, train_motion);
  return 1.0 / (feature_distance(f, f_query) + guard);
}

RetrievalResult retrieve_ste(const SceneField& query, const MotionDataset& ds, double guard) {
  check_query(query, ds);
  RetrievalResult best{0, -1.0, RetrievalMethod::ste};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double s = ste_similarity(query, ds.scene(i), ds.motion(i), guard);
    if (s > best.score) best = {i, s, RetrievalMethod::ste};
  }
  return best;
}

RetrievalResult retrieve_mse(const SceneField& query, const MotionDataset& ds) {
  check_query(query, ds);
  RetrievalResult best{0, 0.0, RetrievalMethod::mse};
  const auto q = query.values();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto f = ds.scene(i).values();
    double sum = 0.0;
    for (std::size_t k = 0; k < q.size(); ++k) {
      const double d = q[k] - f[k];
      sum += d * d;
    }
    const double mse = sum / static_cast<double>(q.size());
    if (i == 0 || mse < best.score) best = {i, mse, RetrievalMethod::mse};
  }
  return best;
}

RetrievalResult retrieve_cheat(const Motion& gt_motion, const MotionDataset& ds,
                               const DistanceWeights& w) {
  if (ds.size() == 0) throw InvalidInput("retrieval from an empty dataset");
  RetrievalResult best{0, 0.0, RetrievalMethod::cheat};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double d = motion_distance(gt_motion, ds.motion(i), w);
    if (i == 0 || d < best.score) best = {i, d, RetrievalMethod::cheat};
  }
  return best;
}

SteIndex::SteIndex(const MotionDataset& ds, double guard) : ds_(&ds), guard_(guard) {
  if (ds.size() == 0) throw InvalidInput("retrieval from an empty dataset");
  train_features_.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    train_features_.push_back(ste_extract(ds.scene(i), ds.motion(i)));
  }
}

RetrievalResult SteIndex::retrieve(const SceneField& query) const {
  check_query(query, *ds_);
  RetrievalResult best{0, -1.0, RetrievalMethod::ste};
  for (std::size_t i = 0; i < ds_->size(); ++i) {
    const STEFeature f_query = ste_extract(query, ds_->motion(i));
    const double s = 1.0 / (feature_distance(train_features_[i], f_query) + guard_);
    if (s > best.score) best = {i, s, RetrievalMethod::ste};
  }
  return best;
}

}  // namespace r2diff
