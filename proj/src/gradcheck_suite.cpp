#include "mfqe/gradcheck_suite.hpp"

#include <algorithm>
#include <functional>
#include <random>

#include "mfqe/degradation_sim.hpp"
#include "mfqe/errors.hpp"
#include "mfqe/tensor_engine.hpp"
#include "mfqe/trainer_pipeline.hpp"

namespace mfqe {

namespace {

using nn::Tensor;
using nn::Var;

template <class T>
struct Instance {
  std::vector<Var<T>> leaves;
  std::function<Var<T>()> loss;
};

// Values are drawn in float so the 32- and 64-bit instances hold identical numbers.
class Draw {
 public:
  explicit Draw(std::uint64_t seed) : rng_(seed) {}
  Tensor<float> uniform(std::array<int, 4> s, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor<float> t(s[0], s[1], s[2], s[3]);
    for (auto& v : t.data) v = static_cast<float>(u(rng_));
    return t;
  }
  // Magnitudes in [lo, hi] with random sign, away from the PReLU kink.
  Tensor<float> signed_away(std::array<int, 4> s, double lo, double hi) {
    auto t = uniform(s, lo, hi);
    std::bernoulli_distribution b(0.5);
    for (auto& v : t.data)
      if (b(rng_)) v = -v;
    return t;
  }
  // Integer part in [-r, r], fractional part in [0.2, 0.8].
  Tensor<float> flow(std::array<int, 4> s, int r) {
    std::uniform_int_distribution<int> whole(-r, r);
    std::uniform_real_distribution<double> frac(0.2, 0.8);
    Tensor<float> t(s[0], s[1], s[2], s[3]);
    for (auto& v : t.data) v = static_cast<float>(whole(rng_) + frac(rng_));
    return t;
  }
  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

template <class T>
Var<T> leaf_of(const Tensor<float>& t, const std::string& name) {
  auto v = nn::leaf(t.cast<T>(), true);
  v->name = name;
  return v;
}

template <class T>
Instance<T> op_instance(const std::string& op, std::uint64_t seed) {
  Draw d(seed);
  Instance<T> in;
  auto add = [&](const Tensor<float>& t, const char* name) {
    in.leaves.push_back(leaf_of<T>(t, name));
    return in.leaves.back();
  };
  Var<T> out;
  std::function<Var<T>()> body;
  if (op.rfind("conv2d", 0) == 0) {
    const bool s2 = op == "conv2d_s2";
    const bool valid = op == "conv2d_valid";
    auto x = add(d.uniform({s2 ? 2 : 1, 2, s2 ? 7 : 5, s2 ? 6 : 5}, -1, 1), "x");
    auto w = add(d.uniform({3, 2, 3, valid ? 2 : 3}, -1, 1), "w");
    auto b = add(d.uniform({1, 3, 1, 1}, -1, 1), "b");
    body = [=] { return nn::conv2d(x, w, b, s2 ? 2 : 1, valid ? nn::Padding::Valid : nn::Padding::Same); };
  } else if (op == "prelu") {
    auto x = add(d.signed_away({1, 3, 4, 4}, 0.05, 1.5), "x");
    auto a = add(d.uniform({1, 3, 1, 1}, 0.05, 0.5), "a");
    body = [=] { return nn::prelu(x, a); };
  } else if (op == "tanh") {
    auto x = add(d.uniform({1, 2, 4, 4}, -2, 2), "x");
    body = [=] { return nn::tanh(x); };
  } else if (op == "scale_add") {
    auto x = add(d.uniform({1, 2, 3, 4}, -1, 1), "x");
    auto y = add(d.uniform({1, 2, 3, 4}, -1, 1), "y");
    body = [=] { return nn::add(nn::scale(x, T(1.7)), y); };
  } else if (op == "concat") {
    auto x = add(d.uniform({2, 1, 3, 4}, -1, 1), "x");
    auto y = add(d.uniform({2, 2, 3, 4}, -1, 1), "y");
    body = [=] { return nn::concat_channels<T>({x, y}); };
  } else if (op == "bilinear_sample") {
    auto img = add(d.uniform({1, 2, 6, 7}, 0, 1), "input");
    auto f = add(d.flow({1, 2, 6, 7}, 3), "flow");
    body = [=] { return nn::bilinear_sample(img, f); };
  } else if (op == "upscale_flow_x2" || op == "upscale_flow_x4") {
    auto f = add(d.uniform({1, 2, 3, 4}, -2, 2), "flow");
    const int factor = op == "upscale_flow_x2" ? 2 : 4;
    body = [=] { return nn::upscale_flow(f, factor); };
  } else if (op == "mse") {
    auto x = add(d.uniform({1, 2, 4, 4}, 0, 1), "x");
    auto y = add(d.uniform({1, 2, 4, 4}, 0, 1), "y");
    in.loss = [=] { return nn::mse(x, y); };
    return in;
  } else {
    throw ArgumentError("gradcheck_suite: unknown op '" + op + "'");
  }
  // Random linear probe turns the op output into a scalar.
  Tensor<float> probe;
  {
    nn::NoGradGuard ng;
    const auto shape = body()->value.shape;
    probe = d.uniform(shape, -1, 1);
  }
  const auto weights = probe.cast<T>();
  in.loss = [=] { return nn::weighted_sum(body(), weights); };
  return in;
}

struct GraphSetup {
  McConfig mc;
  QeConfig qe;
  MfcnnModel model;
  TrainingSample sample;
};

GraphSetup graph_setup(std::uint64_t seed) {
  GraphSetup g;
  g.mc.reduction = 6;
  g.mc.max_displacement = 1.5;
  g.qe.reduction = 16;
  g.qe.conv9_gain = 1.0;
  g.model = MfcnnModel::init(g.mc, g.qe, seed);
  // Full-gain flow heads so the warps see displacements of a few pixels.
  std::mt19937_64 rng(seed ^ 0xA5A5A5A5ULL);
  for (const char* layer : {"mc.coarse.4.w", "mc.fine.3.w", "mc.pix.4.w"}) {
    auto p = g.model.params.get(layer);
    p->value = nn::he_normal<float>(p->value.shape, rng, 1.0);
  }
  SynthSpec s;
  s.width = 16;
  s.height = 16;
  s.frame_count = 5;
  s.motion = {{1.3, -0.7}};
  s.texture_seed = seed;
  const auto pair = degrade_clip(synth_clip(s), QualitySchedule{});
  auto t = [&](const VideoClip& c, int i) { return frame_to_tensor(c.frames[static_cast<std::size_t>(i)]); };
  g.sample.f_np = t(pair.compressed, 2);
  g.sample.f_p1 = t(pair.compressed, 0);
  g.sample.f_p2 = t(pair.compressed, 4);
  g.sample.f_r_np = t(pair.raw, 2);
  g.sample.f_r_p1 = t(pair.raw, 0);
  g.sample.f_r_p2 = t(pair.raw, 4);
  return g;
}

template <class T>
Instance<T> graph_instance(const GraphSetup& g) {
  auto store = std::make_shared<nn::ParamStore<T>>(
      g.model.params.cast<T>().subset([](const std::string& n) { return n.rfind("qe_sf.", 0) != 0; }));
  Instance<T> in;
  in.leaves = store->params();
  in.loss = [store, &g] { return sample_graph(g.sample, *store, g.mc, g.qe, {1.0, 1.0}).total; };
  return in;
}

void fold(GradSuiteRow& row, const std::vector<nn::GradcheckEntry>& entries) {
  for (const auto& e : entries) {
    row.max_rel_error = std::max(row.max_rel_error, e.max_rel_error);
    row.checked += e.checked;
    row.skipped_kinks += e.skipped_kinks;
  }
}

// 32-bit analytic gradients against 64-bit central differences at the same point.
void check32(GradSuiteRow& row, Instance<float> f, Instance<double> d, const nn::GradcheckOptions& o) {
  for (auto& v : f.leaves) v->ensure_grad().fill(0.0f);
  nn::backward(f.loss());
  std::vector<Tensor<double>> analytic;
  for (const auto& v : f.leaves) analytic.push_back(v->grad.cast<double>());
  fold(row, nn::gradcheck_reference(d.loss, d.leaves, analytic, o));
}

}  // namespace

std::vector<GradSuiteRow> run_gradcheck_suite(const GradSuiteOptions& opts) {
  if (opts.instances < 1) throw ArgumentError("gradcheck_suite: instances must be >= 1");
  const std::vector<std::string> ops{"conv2d_s1",      "conv2d_s2", "conv2d_valid",    "prelu",
                                     "tanh",           "scale_add", "concat",          "bilinear_sample",
                                     "upscale_flow_x2", "upscale_flow_x4", "mse"};
  std::vector<GradSuiteRow> rows;
  for (const auto& op : ops) {
    GradSuiteRow r64{op, 64, opts.instances, 0.0, 1e-5};
    GradSuiteRow r32{op, 32, opts.instances, 0.0, 1e-3};
    for (int i = 0; i < opts.instances; ++i) {
      const std::uint64_t s = opts.seed * 1000003ULL + static_cast<std::uint64_t>(i);
      nn::GradcheckOptions o;
      o.h = opts.op_step;
      o.seed = s;
      auto d = op_instance<double>(op, s);
      fold(r64, nn::gradcheck<double>(d.loss, d.leaves, o));
      check32(r32, op_instance<float>(op, s), op_instance<double>(op, s), o);
    }
    rows.push_back(r32);
    rows.push_back(r64);
  }

  GradSuiteRow g64{"mfcnn_graph", 64, opts.instances, 0.0, 1e-5};
  GradSuiteRow g32{"mfcnn_graph", 32, opts.instances, 0.0, 1e-3};
  for (int i = 0; i < opts.instances; ++i) {
    const std::uint64_t s = opts.seed * 7919ULL + static_cast<std::uint64_t>(i);
    const auto setup = graph_setup(s);
    nn::GradcheckOptions o;
    o.h = opts.graph_step;
    o.seed = s;
    o.max_entries_per_tensor = opts.graph_entries;
    auto d = graph_instance<double>(setup);
    fold(g64, nn::gradcheck<double>(d.loss, d.leaves, o));
    check32(g32, graph_instance<float>(setup), graph_instance<double>(setup), o);
  }
  rows.push_back(g32);
  rows.push_back(g64);
  return rows;
}

}  // namespace mfqe
