// Prints one PASS/FAIL line per acceptance criterion; exits nonzero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fpgs/consistency.h"
#include "fpgs/nets.h"
#include "fpgs/parallel.h"
#include "fpgs/semantic_field.h"
#include "fpgs/style_dictionary.h"
#include "fpgs/stylizer.h"
#include "fpgs/synthetic.h"

#ifdef FPGS_WITH_TOOLS
#include "cli.h"
#include "studio.h"
#endif

namespace fpgs {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

MatrixRM random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, float lo, float hi) {
  std::uniform_real_distribution<float> u(lo, hi);
  MatrixRM m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

double cosine(const Eigen::Ref<const Eigen::RowVectorXf>& a, const Eigen::Ref<const Eigen::RowVectorXf>& b) {
  return a.cast<double>().dot(b.cast<double>()) / (a.cast<double>().norm() * b.cast<double>().norm());
}

// Nudges a DC coefficient until the decoded diffuse value is exactly `target`.
float exact_dc(float target) {
  float dc = (target - kShDcOffset) / kShC0;
  for (int i = 0; i < 64 && kShC0 * dc + kShDcOffset != target; ++i)
    dc = std::nextafter(dc, kShC0 * dc + kShDcOffset < target ? INFINITY : -INFINITY);
  return dc;
}

class IdentityCodec final : public ColorCodec {
 public:
  MatrixRM encode(const MatrixRM& colors) const override { return colors; }
  MatrixRM decode(const MatrixRM& features) const override { return features; }
};

const StyleNetworks& networks() {
  static const StyleNetworks nets = synthetic::make_networks(0);
  return nets;
}

// ----- criteria -----

Outcome mlp_vgg_equivalence() {
  const auto start = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  double worst = 0.0;
  for (int draw = 0; draw < 100; ++draw) {
    const VggSliceWeights cnn = VggSliceWeights::random(1000 + draw);
    const MlpVggWeights mlp = distill_mlp_vgg(cnn);
    for (int k = 0; k < 100; ++k) {
      const Eigen::Vector3f rgb(u(rng), u(rng), u(rng));
      FeatureMap img(64, 64, 3);
      for (size_t p = 0; p < img.pixel_count(); ++p)
        for (int c = 0; c < 3; ++c) img.data[p * 3 + c] = rgb[c];
      const FeatureMap out = vgg_slice_forward(img, cnn);
      const MatrixRM dense = mlp_vgg_forward(MatrixRM(rgb.transpose()), mlp);
      const int cy = out.height / 2, cx = out.width / 2;
      for (int c = 0; c < kVggChannels; ++c) {
        worst = std::max(worst, std::abs(double(dense(0, c)) - double(out.at(cy, cx, c))));
      }
    }
  }
  const double secs = seconds_since(start);
  return {worst <= 1e-4 && secs < 60.0, fmt("max |mlp - cnn| = %.3g over 100 x 100 draws (<= 1e-4), %.1f s (< 60 s)",
                                             worst, secs)};
}

Outcome adain_statistics() {
  const auto& nets = networks();
  const auto syn = synthetic::make_plane_scene();
  synthetic::ReferenceOptions ro;
  ro.width = ro.height = 128;
  ro.texture = 0.05f;
  const ReferenceBundle ref = synthetic::make_reference(ro, *nets.vgg);
  const StyleDictionary dict = build_dictionary(std::span(&ref, 1), 1, 0);
  const StyleAssignment a = semantic_match(decoded_scene_features(syn.scene, nets.autoencoder), dict);
  const StylizeStep step = stylize_once(diffuse_colors(syn.scene), a, nets.codec());
  const ChannelStats got = channel_stats(step.features);
  double worst = 0.0;
  int live = 0;
  for (int k = 0; k < kVggChannels; ++k) {
    // a constant content channel cannot carry a spread; its output is the style mean alone
    if (step.content_stats.std[k] <= 10 * kStdFloor) continue;
    ++live;
    worst = std::max({worst, std::abs(got.mean[k] - dict.mus(0, k)), std::abs(got.std[k] - dict.sigmas(0, k))});
  }
  return {worst <= 1e-3 && live > 0,
          fmt("max per-channel |stat - reference| = %.3g (<= 1e-3) over %.0f non-constant channels", worst, live)};
}

Outcome semantic_matching() {
  const auto& nets = networks();
  const auto syn = synthetic::make_plane_scene();
  synthetic::ReferenceOptions ro;  // codes scaled by 100
  const ReferenceBundle ref = synthetic::make_reference(ro, *nets.vgg);
  StylizeConfig cfg;
  cfg.clusters = 2;
  cfg.iterations = 1;
  const StylizeResult r = stylize_scene(syn.scene, std::span(&ref, 1), nets, cfg);
  auto entry_of = [&](int region) {
    for (Eigen::Index e = 0; e < r.dictionary.keys.rows(); ++e) {
      int arg = 0;
      r.dictionary.keys.row(e).head(kCodeDims).maxCoeff(&arg);
      if (arg == region) return int(e);
    }
    return -1;
  };
  const int e0 = entry_of(0), e1 = entry_of(1);
  if (e0 < 0 || e1 < 0 || e0 == e1) return {false, "dictionary entries do not map one-to-one onto planted regions"};
  size_t confident = 0;
  for (size_t i = 0; i < syn.scene.size(); ++i) {
    const int e = syn.labels[i] == 0 ? e0 : e1;
    confident += r.assignment.attention(Eigen::Index(i), e) >= 0.999f;
  }
  const double share = double(confident) / double(syn.scene.size());
  const auto labels = synthetic::render_labels(syn, syn.camera);
  double worst_iou = 1.0;
  for (int region = 0; region < 2; ++region) {
    const FeatureMap h = attention_heatmap(r.assignment, syn.scene, syn.camera, region == 0 ? e0 : e1);
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < labels.size(); ++i) {
      const bool pred = h.data[i] > 0.5f, truth = labels[i] == region;
      inter += pred && truth;
      uni += pred || truth;
    }
    worst_iou = std::min(worst_iou, uni ? double(inter) / double(uni) : 0.0);
  }
  return {share >= 0.999 && worst_iou >= 0.95,
          fmt("%.4f%% of Gaussians at >= 0.999 attention (>= 99.9%%), min heatmap IoU %.4f (>= 0.95)", 100 * share,
              worst_iou)};
}

Outcome iterative_fixed_point() {
  GaussianScene scene;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<float> pos(-1.0f, 1.0f);
  // two-valued channels with dyadic mean and spread, so every statistic is representable
  const float lo[3] = {0.25f, 0.125f, 0.5f}, hi[3] = {0.75f, 0.375f, 1.0f};
  for (int i = 0; i < 256; ++i) {
    GaussianPrim g;
    g.position = {pos(rng), pos(rng), 4.0f + pos(rng)};
    g.scale = Eigen::Vector3f::Constant(0.05f);
    for (int c = 0; c < 3; ++c) g.sh(c, 0) = exact_dc(i % 2 ? hi[c] : lo[c]);
    for (int c = 0; c < 3; ++c)
      for (int k = 1; k < kShCoefficients; ++k) g.sh(c, k) = 0.1f * pos(rng);
    scene.prims.push_back(g);
  }
  StyleDictionary dict;
  dict.keys = MatrixRM::Zero(1, kSemanticDims);
  dict.keys(0, 0) = 1.0f;
  dict.mus = Eigen::RowVector3f(0.5f, 0.25f, 0.625f);
  dict.sigmas = Eigen::RowVector3f(0.125f, 0.0625f, 0.25f);
  dict.provenance = {{0, 0}};
  MatchConfig mc;
  mc.temperature = 1.0f;
  const StyleAssignment a = semantic_match(random_matrix(256, kSemanticDims, rng, -1.0f, 1.0f), dict, mc);
  StylizeConfig cfg;
  cfg.iterations = 6;
  cfg.temperature = 1.0f;
  const IterativeResult r = iterative_stylize(scene, a, IdentityCodec{}, cfg);
  int identical = 0;
  for (size_t it = 2; it < r.diffuse_history.size(); ++it) identical += r.diffuse_history[it] == r.diffuse_history[1];
  const bool moved = r.diffuse_history[0] != diffuse_colors(scene);
  return {moved && identical == int(r.diffuse_history.size()) - 2,
          fmt("iterations 3..%.0f bit-identical to iteration 2: %.0f of %.0f", double(r.diffuse_history.size()),
              identical, double(r.diffuse_history.size()) - 2)};
}

struct ThreePlaneRun {
  synthetic::SyntheticScene syn = synthetic::make_three_plane_scene(0);
  StylizeResult result;
  ConsistencyReport report;
};

Outcome multiview_consistency() {
  const auto start = Clock::now();
  const auto& nets = networks();
  ThreePlaneRun run;
  synthetic::ReferenceOptions ro;
  ro.width = ro.height = 128;
  ro.regions = run.syn.regions;
  ro.semantic_stride = 8;
  ro.texture = 0.05f;
  ro.seed = mix_seed(0, 7);
  const ReferenceBundle ref = synthetic::make_reference(ro, *nets.vgg);
  StylizeConfig cfg;
  cfg.clusters = 3;
  run.result = stylize_scene(run.syn.scene, std::span(&ref, 1), nets, cfg);
  const auto traj = synthetic::default_trajectory(run.syn, 8);
  run.report = evaluate_consistency(run.syn.scene, run.result.scene, traj);
  const double ratio = run.report.long_stylized / run.report.long_original;
  const double secs = seconds_since(start);
  return {run.report.depth_identical && ratio <= 1.5 && secs < 120.0,
          std::string("depth identical: ") + (run.report.depth_identical ? "yes" : "no") +
              fmt(", long-baseline warp error %.5f vs original %.5f, ratio %.3f (<= 1.5), %.1f s (< 120 s)",
                  run.report.long_stylized, run.report.long_original, ratio, secs)};
}

Outcome distillation() {
  // planted codes on a grid of separated Gaussians, seen from four nearby viewpoints
  GaussianScene scene;
  for (int y = 0; y < 12; ++y) {
    for (int x = 0; x < 12; ++x) {
      GaussianPrim g;
      g.position = {-0.77f + 0.14f * x, -0.77f + 0.14f * y, 4.0f};
      g.scale = {0.03f, 0.03f, 0.003f};
      g.opacity = 0.95f;
      scene.prims.push_back(g);
    }
  }
  std::vector<Camera> cams;
  for (float dx : {-0.1f, 0.0f, 0.1f}) {
    for (float dy : {0.0f, 0.08f}) {
      Camera c;
      c.width = c.height = 96;
      c.fx = c.fy = 150.0f;
      c.cx = c.cy = 48.0f;
      c.translation = {dx, dy, 0.0f};
      cams.push_back(c);
    }
  }
  std::mt19937_64 rng(12);
  const MatrixRM planted = random_matrix(Eigen::Index(scene.size()), kCodeDims, rng, -0.8f, 0.8f);
  std::vector<FeatureMap> targets;
  for (const auto& c : cams) targets.push_back(rasterize_features(scene, c, planted).features);
  DistillConfig cfg;
  cfg.iterations = 500;
  const DistillResult result = distill_scene_features(scene, cams, targets, cfg);
  size_t visible = 0, good = 0;
  double worst_cos = 1.0;
  for (size_t i = 0; i < scene.size(); ++i) {
    if (result.visibility[i] < 0.5f) continue;
    ++visible;
    const double c = cosine(result.features.row(Eigen::Index(i)), planted.row(Eigen::Index(i)));
    worst_cos = std::min(worst_cos, c);
    good += c >= 0.99;
  }

  // analytic gradient against central differences on three Gaussians
  GaussianScene tiny;
  for (int i = 0; i < 3; ++i) {
    GaussianPrim g;
    g.position = {-0.9f + 0.9f * i, 0.1f * i, 3.0f + 0.5f * i};
    g.scale = {0.25f, 0.2f, 0.01f};
    g.opacity = 0.6f + 0.1f * i;
    tiny.prims.push_back(g);
  }
  Camera cam;
  cam.width = 24;
  cam.height = 16;
  cam.fx = cam.fy = 20.0f;
  cam.cx = 12.0f;
  cam.cy = 8.0f;
  const FeatureMap target = FeatureMap::from_matrix(random_matrix(16 * 24, 4, rng, -1.0f, 1.0f), 16, 24);
  const DistillProblem problem(tiny, std::span(&cam, 1), std::span(&target, 1));
  std::normal_distribution<double> gauss(0.0, 0.5);
  double worst_rel = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::MatrixXd f(3, 4);
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = gauss(rng);
    const Eigen::MatrixXd analytic = problem.gradient(f);
    Eigen::MatrixXd numeric(3, 4);
    const double h = 1e-7;
    for (Eigen::Index i = 0; i < f.size(); ++i) {
      Eigen::MatrixXd fp = f, fm = f;
      fp.data()[i] += h;
      fm.data()[i] -= h;
      numeric.data()[i] = (problem.loss(fp) - problem.loss(fm)) / (2.0 * h);
    }
    worst_rel = std::max(worst_rel, (analytic - numeric).norm() / analytic.norm());
  }
  return {visible > 0 && good == visible && worst_rel <= 1e-4,
          fmt("%.0f of %.0f visible Gaussians at cosine >= 0.99 (min %.5f) after 500 Adam steps; gradient rel. error "
              "%.2g (<= 1e-4)",
              double(good), double(visible), worst_cos, worst_rel)};
}

Outcome autoencoder() {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd basis(kSemanticDims, kCodeDims);
  for (Eigen::Index i = 0; i < basis.size(); ++i) basis.data()[i] = g(rng);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(basis);
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(kSemanticDims, kCodeDims);
  const int n = 65536;
  MatrixRM x(n, kSemanticDims);
  for (int r = 0; r < n; ++r) {
    Eigen::VectorXd c(kCodeDims);
    for (int k = 0; k < kCodeDims; ++k) c[k] = u(rng);
    const Eigen::VectorXd v = q * c;
    x.row(r) = (v / v.norm()).cast<float>().transpose();
  }
  const FeatureMap map = FeatureMap::from_matrix(x, 256, 256);
  AutoencoderTrainConfig cfg;  // 16-d code, 5 epochs, lr 1e-4
  const auto result = train_autoencoder(std::span(&map, 1), cfg);
  const double cos = reconstruction_cosine(x, result.weights);
  bool monotone = true;
  for (size_t e = 1; e < result.epoch_loss.size(); ++e) monotone &= result.epoch_loss[e] <= result.epoch_loss[e - 1];
  std::string losses;
  for (double l : result.epoch_loss) losses += fmt(" %.4g", l);
  return {cos >= 0.999 && monotone && result.epoch_loss.size() == 5,
          fmt("reconstruction cosine %.5f (>= 0.999), epoch means", cos) + losses +
              (monotone ? " non-increasing" : " INCREASE")};
}

Outcome rasterizer() {
  std::mt19937_64 rng(14);
  GaussianScene scene;
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (int i = 0; i < 5000; ++i) {
    GaussianPrim g;
    g.position = {1.5f * u(rng), 1.5f * u(rng), 5.0f + u(rng)};
    g.rotation = Eigen::Quaternionf(Eigen::Vector4f::Random().normalized());
    g.scale = {0.03f + 0.02f * u(rng), 0.03f + 0.02f * u(rng), 0.03f + 0.02f * u(rng)};
    g.opacity = 0.5f + 0.45f * u(rng);
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < kShCoefficients; ++k) g.sh(c, k) = (k == 0 ? 1.0f : 0.2f) * u(rng);
    scene.prims.push_back(g);
  }
  scene.background = {0.1f, 0.2f, 0.3f};
  Camera cam;
  cam.width = 160;
  cam.height = 120;
  cam.fx = cam.fy = 150.0f;
  cam.cx = 80.0f;
  cam.cy = 60.0f;
  cam.rotation = Eigen::AngleAxisf(0.05f, Eigen::Vector3f::UnitY()).toRotationMatrix();

  const MatrixRM f = random_matrix(5000, 8, rng, -1.0f, 1.0f);
  const MatrixRM h = random_matrix(5000, 8, rng, -1.0f, 1.0f);
  set_thread_count(1);
  const FeatureMap single = rasterize_features(scene, cam, f).features;
  const FeatureMap color_single = rasterize_color(scene, cam);
  bool threads_equal = true;
  for (int t : {2, 4, 8}) {
    set_thread_count(t);
    threads_equal &= rasterize_features(scene, cam, f).features == single;
    threads_equal &= rasterize_color(scene, cam) == color_single;
  }
  set_thread_count(0);

  const float a = 0.7f, b = -1.3f;
  const FeatureMap lhs = rasterize_features(scene, cam, MatrixRM(a * f + b * h)).features;
  const FeatureMap rh = rasterize_features(scene, cam, h).features;
  double worst = 0.0;
  for (size_t i = 0; i < lhs.data.size(); ++i) {
    worst = std::max(worst, std::abs(double(lhs.data[i]) - (a * double(single.data[i]) + b * double(rh.data[i]))));
  }
  const std::array<float, 3> bg{scene.background.x(), scene.background.y(), scene.background.z()};
  const bool color_equal = rasterize_features(scene, cam, view_colors(scene, cam), {}, bg).features == color_single;
  return {threads_equal && worst <= 1e-5 && color_equal,
          std::string("threads 1/2/4/8 bit-exact: ") + (threads_equal ? "yes" : "no") +
              fmt(", linearity max error %.3g (<= 1e-5), color path == 3-channel feature path: ", worst) +
              (color_equal ? "yes" : "no")};
}

Outcome throughput() {
  synthetic::PlaneOptions po;
  po.n_per_side = 317;  // 100,489 Gaussians
  po.image_width = po.image_height = 512;
  po.regions = 4;
  const auto syn = synthetic::make_plane_scene(po);
  rasterize_color(syn.scene, syn.camera);
  auto start = Clock::now();
  const FeatureMap img = rasterize_color(syn.scene, syn.camera);
  const double render_s = seconds_since(start);

  const auto& nets = networks();
  std::vector<ReferenceBundle> refs;
  for (int i = 0; i < 2; ++i) {
    synthetic::ReferenceOptions ro;
    ro.width = ro.height = 128;
    ro.regions = 4;
    ro.texture = 0.05f;
    ro.seed = uint64_t(i);
    refs.push_back(synthetic::make_reference(ro, *nets.vgg));
  }
  StylizeConfig cfg;
  cfg.clusters = 10;
  cfg.iterations = 2;
  start = Clock::now();
  const StylizeResult r = stylize_scene(syn.scene, refs, nets, cfg);
  const double stylize_s = seconds_since(start);
  const int threads = thread_count();
  return {render_s <= 1.0 && stylize_s <= 5.0 && img.width == 512 && r.scene.size() == syn.scene.size(),
          fmt("render %.0f Gaussians at 512x512 in %.3f s (<= 1 s); stylize 2 refs x 10 clusters x 2 iterations in "
              "%.3f s (<= 5 s); %.0f worker thread(s)",
              double(syn.scene.size()), render_s, stylize_s, threads)};
}

#ifdef FPGS_WITH_TOOLS
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome golden_pipeline() {
  const fs::path golden = FPGS_GOLDEN_DIR;
  std::mt19937_64 rng(std::random_device{}());
  const fs::path dir = fs::temp_directory_path() / ("fpgs_accept_" + std::to_string(rng()));
  fs::create_directories(dir);
  auto run = [&](std::vector<std::string> args) {
    args.insert(args.begin(), "fpgs");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream sink;
    auto* old = std::cout.rdbuf(sink.rdbuf());
    const int code = cli::run(int(argv.size()), argv.data());
    std::cout.rdbuf(old);
    return code;
  };
  const std::string ply = (dir / "scene.ply").string(), stem = (dir / "scene").string();
  int codes = 0;
  codes += run({"synth", "--preset", "three-plane", "--out", ply, "--seed", "0", "--views", "8"});
  codes += run({"build-dict", "--refs", stem + ".ref.png", "--semantic", stem + ".ref_semantic.tf", "--weights",
                stem + ".weights.tf", "--clusters", "3", "--seed", "0", "--out", (dir / "dict.tf").string()});
  codes += run({"stylize", "--scene", ply, "--features", stem + ".features.tf", "--dict", (dir / "dict.tf").string(),
                "--weights", stem + ".weights.tf", "--out", (dir / "styled.ply").string()});
  codes += run({"metrics", "--original", ply, "--stylized", (dir / "styled.ply").string(), "--trajectory",
                stem + ".trajectory.json", "--long-gap", "4", "--out", (dir / "metrics.csv").string()});
  const bool csv_ok = codes == 0 && slurp(dir / "metrics.csv") == slurp(golden / "pipeline_metrics.csv");
  const bool ply_ok =
      codes == 0 && studio::sha256_hex(slurp(dir / "styled.ply")) + "\n" == slurp(golden / "pipeline_styled.sha256");
  fs::remove_all(dir);
  return {csv_ok && ply_ok, std::string("metrics CSV ") + (csv_ok ? "matches" : "differs from") +
                                " golden; styled PLY SHA-256 " + (ply_ok ? "matches" : "differs from") + " golden"};
}
#else
Outcome golden_pipeline() { return {false, "built without the CLI tools"}; }
#endif

}  // namespace
}  // namespace fpgs

int main() {
  using namespace fpgs;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"MLP-VGG equivalence", mlp_vgg_equivalence},
      {"AdaIN statistics", adain_statistics},
      {"Semantic matching exactness", semantic_matching},
      {"Iterative fixed point", iterative_fixed_point},
      {"Multi-view consistency", multiview_consistency},
      {"Feature distillation recovery", distillation},
      {"Autoencoder", autoencoder},
      {"Rasterizer determinism and linearity", rasterizer},
      {"Throughput", throughput},
      {"Golden pipeline", golden_pipeline},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    const auto start = Clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), seconds_since(start));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
