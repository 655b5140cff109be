#include "cli.h"

#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fpgs/consistency.h"
#include "fpgs/parallel.h"
#include "fpgs/semantic_field.h"
#include "fpgs/style_dictionary.h"
#include "fpgs/stylizer.h"
#include "fpgs/synthetic.h"
#include "studio.h"
#include "tool_io.h"

// After Eigen: resolv.h, pulled in by httplib, defines a _res macro.
#include <httplib.h>

namespace fpgs::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

fs::path sidecar(const fs::path& ply, const std::string& suffix) {
  fs::path p = ply;
  p.replace_extension();
  return p.string() + suffix;
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_parent(path);
  write_file_atomic(path, text);
}

void write_tensors(const TensorFile& file, const fs::path& path) {
  ensure_parent(path);
  write_tensor_file(file, path);
}

std::vector<FeatureMap> read_semantic_dir(const fs::path& dir) {
  std::vector<FeatureMap> maps;
  for (const auto& f : tools::list_files(dir, ".tf")) maps.push_back(read_tensor_file(f).feature_map("semantic"));
  if (maps.empty()) throw ValidationError("no .tf semantic maps in " + dir.string());
  return maps;
}

// Rotates the camera about the vertical axis through `pivot`.
Camera orbit_camera(const Camera& cam, const Eigen::Vector3f& pivot, float angle) {
  const Eigen::Vector3f up = -cam.rotation.row(1).transpose();
  const Eigen::Matrix3f rot = Eigen::AngleAxisf(angle, up.normalized()).toRotationMatrix();
  Camera out = cam;
  const Eigen::Vector3f center = pivot + rot * (cam.center() - pivot);
  out.rotation = cam.rotation * rot.transpose();
  out.translation = -out.rotation * center;
  return out;
}

struct Globals {
  int threads = 0;
};

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"fpgs: feed-forward stylization of Gaussian splatting scenes"};
  app.require_subcommand(1);
  Globals globals;
  app.add_option("--threads", globals.threads, "Worker threads (default: FPGS_THREADS or all cores)")
      ->check(CLI::NonNegativeNumber);
  std::function<void()> action;

  // distill-vgg
  struct {
    std::string weights, out;
  } dv;
  auto* distill_vgg = app.add_subcommand("distill-vgg", "Collapse VGG slice kernels into the MLP-VGG");
  distill_vgg->add_option("--weights", dv.weights, "TensorFile with vgg.* tensors")->required();
  distill_vgg->add_option("--out", dv.out, "Output TensorFile with mlpvgg.* tensors")->required();
  distill_vgg->callback([&] {
    action = [&] {
      const auto vgg = VggSliceWeights::from_tensors(read_tensor_file(dv.weights));
      TensorFile out;
      distill_mlp_vgg(vgg).to_tensors(out);
      write_tensors(out, dv.out);
    };
  });

  // train-ae
  struct {
    std::string features, out;
    AutoencoderTrainConfig cfg;
  } ta;
  auto* train_ae = app.add_subcommand("train-ae", "Train the semantic autoencoder on 384-channel maps");
  train_ae->add_option("--features", ta.features, "Directory of .tf files holding a 'semantic' tensor")->required();
  train_ae->add_option("--out", ta.out, "Output TensorFile with ae.* tensors")->required();
  train_ae->add_option("--epochs", ta.cfg.epochs)->capture_default_str();
  train_ae->add_option("--lr", ta.cfg.lr)->capture_default_str();
  train_ae->add_option("--lambda-cos", ta.cfg.lambda_cos)->capture_default_str();
  train_ae->add_option("--batch-size", ta.cfg.batch_size)->capture_default_str();
  train_ae->add_option("--seed", ta.cfg.seed)->capture_default_str();
  train_ae->callback([&] {
    action = [&] {
      const auto maps = read_semantic_dir(ta.features);
      const auto result = train_autoencoder(maps, ta.cfg);
      TensorFile out;
      result.weights.to_tensors(out);
      write_tensors(out, ta.out);
      json summary{{"initial_loss", result.initial_loss},
                   {"final_loss", result.final_loss},
                   {"epoch_loss", result.epoch_loss}};
      std::cout << summary.dump() << "\n";
    };
  });

  // distill-features
  struct {
    std::string scene, cams, features, ae, out;
    DistillConfig cfg;
  } df;
  auto* distill_features = app.add_subcommand("distill-features", "Fit per-Gaussian semantic codes to view maps");
  distill_features->add_option("--scene", df.scene, "Input PLY")->required();
  distill_features->add_option("--cams", df.cams, "Trajectory JSON, one camera per map")->required();
  distill_features->add_option("--features", df.features, "Directory of 384-channel .tf maps, sorted by name")
      ->required();
  distill_features->add_option("--ae", df.ae, "TensorFile with ae.* tensors")->required();
  distill_features->add_option("--out", df.out, "Output TensorFile ('features', 'visibility')")->required();
  distill_features->add_option("--iters", df.cfg.iterations)->capture_default_str();
  distill_features->add_option("--lr", df.cfg.lr)->capture_default_str();
  distill_features->callback([&] {
    action = [&] {
      const auto loaded = tools::load_scene(df.scene);
      const auto cams = tools::read_trajectory(df.cams);
      const auto ae = AutoencoderWeights::from_tensors(read_tensor_file(df.ae));
      std::vector<FeatureMap> encoded;
      for (const auto& m : read_semantic_dir(df.features)) encoded.push_back(encode_map(m, ae));
      const auto result = distill_scene_features(loaded.scene, cams, encoded, df.cfg);
      TensorFile out;
      out.add("features", result.features);
      out.add("visibility", {static_cast<uint64_t>(result.visibility.size())}, result.visibility);
      write_tensors(out, df.out);
      std::cout << json{{"initial_loss", result.loss_history.front()}, {"final_loss", result.loss_history.back()}}.dump()
                << "\n";
    };
  });

  // build-dict
  struct {
    std::string refs, semantic, weights, out;
    int clusters = 10;
    uint64_t seed = 0;
  } bd;
  auto* build_dict = app.add_subcommand("build-dict", "Cluster references into a style dictionary");
  build_dict->add_option("--refs", bd.refs, "Comma-separated reference PNGs")->required();
  build_dict->add_option("--semantic", bd.semantic, "Comma-separated semantic TensorFiles, one per reference")
      ->required();
  build_dict->add_option("--weights", bd.weights, "TensorFile with vgg.* tensors")->required();
  build_dict->add_option("--clusters", bd.clusters)->capture_default_str();
  build_dict->add_option("--seed", bd.seed)->capture_default_str();
  build_dict->add_option("--out", bd.out, "Output dictionary TensorFile")->required();
  build_dict->callback([&] {
    action = [&] {
      const auto images = split_list(bd.refs);
      const auto sems = split_list(bd.semantic);
      if (images.size() != sems.size()) throw ValidationError("--refs and --semantic must list the same count");
      const auto vgg = VggSliceWeights::from_tensors(read_tensor_file(bd.weights));
      std::vector<ReferenceBundle> refs;
      for (size_t i = 0; i < images.size(); ++i) {
        refs.push_back(make_reference_bundle(read_image(images[i]), read_tensor_file(sems[i]).feature_map("semantic"),
                                             vgg));
      }
      TensorFile out;
      build_dictionary(refs, bd.clusters, bd.seed).to_tensors(out);
      write_tensors(out, bd.out);
    };
  });

  // stylize
  struct {
    std::string scene, features, dict, weights, out, assignment;
    StylizeConfig cfg;
  } st;
  auto* stylize = app.add_subcommand("stylize", "Stylize a scene against a style dictionary");
  stylize->add_option("--scene", st.scene, "Input PLY")->required();
  stylize->add_option("--features", st.features, "Scene feature TensorFile ('features')")->required();
  stylize->add_option("--dict", st.dict, "Dictionary TensorFile")->required();
  stylize->add_option("--weights", st.weights, "TensorFile with mlpvgg/vgg, decoder and ae tensors")->required();
  stylize->add_option("--out", st.out, "Output PLY")->required();
  stylize->add_option("--iters", st.cfg.iterations)->capture_default_str();
  stylize->add_option("--tau", st.cfg.temperature)->capture_default_str();
  stylize->add_flag("--normalize-keys", st.cfg.normalize_keys);
  stylize->add_flag("--sh-zero-rest", st.cfg.sh_zero_rest);
  stylize->add_flag("--opacity-weighted", st.cfg.opacity_weighted);
  stylize->add_option("--seed", st.cfg.seed)->capture_default_str();
  stylize->add_option("--assignment", st.assignment, "Optional TensorFile for the per-Gaussian style codes");
  stylize->callback([&] {
    action = [&] {
      auto loaded = tools::load_scene(st.scene);
      tools::attach_features(loaded.scene, read_tensor_file(st.features));
      const auto nets = StyleNetworks::from_tensors(read_tensor_file(st.weights));
      auto dict = StyleDictionary::from_tensors(read_tensor_file(st.dict));
      const auto result = stylize_with_dictionary(loaded.scene, std::move(dict), nets, st.cfg);
      ensure_parent(st.out);
      write_gaussian_ply(overlay_sh(loaded.records, result.scene), st.out);
      if (!st.assignment.empty()) {
        TensorFile a;
        a.add("assignment.mean", result.assignment.mean);
        a.add("assignment.std", result.assignment.std);
        a.add("assignment.attention", result.assignment.attention);
        write_tensors(a, st.assignment);
      }
    };
  });

  // render
  struct {
    std::string scene, camera, out, features, weights, semantic_out;
    bool zero_rest = false;
  } rd;
  auto* render = app.add_subcommand("render", "Render one view to PNG");
  render->add_option("--scene", rd.scene, "Input PLY")->required();
  render->add_option("--camera", rd.camera, "Camera JSON")->required();
  render->add_option("--out", rd.out, "Output PNG")->required();
  render->add_flag("--sh-zero-rest", rd.zero_rest, "Drop view-dependent color");
  render->add_option("--features", rd.features, "Scene feature TensorFile, for --semantic-out");
  render->add_option("--weights", rd.weights, "TensorFile with ae.* tensors, for --semantic-out");
  render->add_option("--semantic-out", rd.semantic_out, "Also write the decoded 384-channel semantic map");
  render->callback([&] {
    action = [&] {
      auto loaded = tools::load_scene(rd.scene);
      const Camera cam = tools::read_camera(rd.camera);
      const auto& scene = rd.zero_rest ? without_view_dependence(loaded.scene) : loaded.scene;
      ensure_parent(rd.out);
      write_image(rasterize_color(scene, cam), rd.out);
      if (!rd.semantic_out.empty()) {
        if (rd.features.empty() || rd.weights.empty()) {
          throw CLI::ValidationError("--semantic-out needs --features and --weights");
        }
        tools::attach_features(loaded.scene, read_tensor_file(rd.features));
        const auto ae = AutoencoderWeights::from_tensors(read_tensor_file(rd.weights));
        TensorFile out;
        out.add("semantic", render_semantic_map(loaded.scene, cam, ae));
        write_tensors(out, rd.semantic_out);
      }
    };
  });

  // orbit
  struct {
    std::string scene, camera, out_dir;
    int frames = 36;
    bool zero_rest = false;
  } ob;
  auto* orbit = app.add_subcommand("orbit", "Render frames on a full orbit around the scene centre");
  orbit->add_option("--scene", ob.scene, "Input PLY")->required();
  orbit->add_option("--camera", ob.camera, "Starting camera JSON")->required();
  orbit->add_option("--frames", ob.frames)->capture_default_str()->check(CLI::PositiveNumber);
  orbit->add_option("--out", ob.out_dir, "Output directory for frame_NNNN.png")->required();
  orbit->add_flag("--sh-zero-rest", ob.zero_rest);
  orbit->callback([&] {
    action = [&] {
      auto loaded = tools::load_scene(ob.scene);
      const Camera cam = tools::read_camera(ob.camera);
      const auto& scene = ob.zero_rest ? without_view_dependence(loaded.scene) : loaded.scene;
      Eigen::Vector3f lo = Eigen::Vector3f::Constant(std::numeric_limits<float>::infinity()), hi = -lo;
      for (const auto& p : scene.prims) {
        lo = lo.cwiseMin(p.position);
        hi = hi.cwiseMax(p.position);
      }
      const Eigen::Vector3f pivot = scene.prims.empty() ? Eigen::Vector3f::Zero() : Eigen::Vector3f(0.5f * (lo + hi));
      fs::create_directories(ob.out_dir);
      for (int i = 0; i < ob.frames; ++i) {
        const float angle = 6.283185307179586f * static_cast<float>(i) / static_cast<float>(ob.frames);
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%04d.png", i);
        write_image(rasterize_color(scene, orbit_camera(cam, pivot, angle)), fs::path(ob.out_dir) / name);
      }
    };
  });

  // metrics
  struct {
    std::string original, stylized, trajectory, out, json_out, flows;
    ConsistencyConfig cfg;
  } mt;
  auto* metrics = app.add_subcommand("metrics", "Warp-error consistency report along a trajectory");
  metrics->add_option("--original", mt.original, "Original PLY")->required();
  metrics->add_option("--stylized", mt.stylized, "Stylized PLY")->required();
  metrics->add_option("--trajectory", mt.trajectory, "Trajectory JSON")->required();
  metrics->add_option("--out", mt.out, "Output CSV")->required();
  metrics->add_option("--json", mt.json_out, "Optional JSON summary");
  metrics->add_option("--short-gap", mt.cfg.short_gap)->capture_default_str();
  metrics->add_option("--long-gap", mt.cfg.long_gap)->capture_default_str();
  metrics->add_option("--depth-tolerance", mt.cfg.depth_tolerance, "0 = 1% of the view's depth")
      ->capture_default_str();
  metrics->add_flag("--sh-zero-rest", mt.cfg.sh_zero_rest);
  metrics->add_option("--flows", mt.flows, "Directory of external flow TensorFiles ('flow', 'mask')");
  metrics->callback([&] {
    action = [&] {
      const auto original = tools::load_scene(mt.original);
      const auto stylized = tools::load_scene(mt.stylized);
      const auto cams = tools::read_trajectory(mt.trajectory);
      std::vector<FlowField> flows;
      if (!mt.flows.empty()) {
        for (const auto& f : tools::list_files(mt.flows, ".tf")) flows.push_back(flow_from_tensors(read_tensor_file(f)));
      }
      const auto report = evaluate_consistency(original.scene, stylized.scene, cams, mt.cfg, flows);
      write_text(mt.out, report_csv(report));
      if (!mt.json_out.empty()) write_text(mt.json_out, report_json(report));
      std::cout << report_json(report);
    };
  });

  // synth
  struct {
    std::string preset = "plane2", out;
    uint64_t seed = 0;
    int views = 8;
  } sy;
  auto* synth = app.add_subcommand("synth", "Write a synthetic scene with sidecar files");
  synth->add_option("--preset", sy.preset, "plane2, three-plane or occlusion")->capture_default_str();
  synth->add_option("--out", sy.out, "Output PLY; sidecars share its stem")->required();
  synth->add_option("--seed", sy.seed)->capture_default_str();
  synth->add_option("--views", sy.views, "Trajectory length")->capture_default_str()->check(CLI::PositiveNumber);
  synth->callback([&] {
    action = [&] {
      const auto s = synthetic::make_preset(sy.preset, sy.seed);
      const fs::path ply = sy.out;
      ensure_parent(ply);
      write_gaussian_ply(deactivate(s.scene), ply);
      TensorFile feats;
      feats.add("features", *s.scene.semantic);
      write_tensors(feats, sidecar(ply, ".features.tf"));
      write_text(sidecar(ply, ".camera.json"), tools::camera_to_json(s.camera).dump(2) + "\n");
      const auto traj = synthetic::default_trajectory(s, sy.views);
      write_text(sidecar(ply, ".trajectory.json"), tools::trajectory_to_json(traj).dump(2) + "\n");

      synthetic::ReferenceOptions ro;
      ro.width = ro.height = 128;
      ro.regions = s.regions;
      ro.semantic_stride = 8;
      ro.texture = 0.05f;
      ro.seed = mix_seed(sy.seed, 7);
      write_image(synthetic::reference_image(ro), sidecar(ply, ".ref.png"));
      TensorFile ref_sem;
      ref_sem.add("semantic", synthetic::reference_semantic(ro));
      write_tensors(ref_sem, sidecar(ply, ".ref_semantic.tf"));

      const StyleNetworks nets = synthetic::make_networks(sy.seed);
      TensorFile weights;
      nets.to_tensors(weights);
      write_tensors(weights, sidecar(ply, ".weights.tf"));

      const fs::path sem_dir = sidecar(ply, ".semantic");
      fs::create_directories(sem_dir);
      for (size_t i = 0; i < traj.size(); ++i) {
        const FeatureMap full = render_semantic_map(s.scene, traj[i], nets.autoencoder);
        TensorFile m;
        m.add("semantic", resize_bilinear(full, std::max(1, full.height / 4), std::max(1, full.width / 4)));
        char name[32];
        std::snprintf(name, sizeof(name), "view_%03zu.tf", i);
        write_tensors(m, sem_dir / name);
      }
      std::cout << json{{"gaussians", s.scene.size()}, {"regions", s.regions}, {"views", traj.size()}}.dump() << "\n";
    };
  });

  // serve
  struct {
    std::string scene, features, weights, host = "127.0.0.1", static_dir;
    std::vector<std::string> refs;
    int port = 8080;
    uint64_t seed = 0;
  } sv;
  auto* serve = app.add_subcommand("serve", "Run the studio HTTP service");
  serve->add_option("--scene", sv.scene, "Input PLY")->required();
  serve->add_option("--features", sv.features, "Scene feature TensorFile");
  serve->add_option("--weights", sv.weights, "Network TensorFile")->required();
  serve->add_option("--ref", sv.refs, "Preloaded reference as image.png:semantic.tf (repeatable)");
  serve->add_option("--port", sv.port)->capture_default_str();
  serve->add_option("--host", sv.host)->capture_default_str();
  serve->add_option("--static", sv.static_dir, "Directory served at /");
  serve->add_option("--seed", sv.seed)->capture_default_str();
  serve->callback([&] {
    action = [&] {
      auto loaded = tools::load_scene(sv.scene);
      if (!sv.features.empty()) tools::attach_features(loaded.scene, read_tensor_file(sv.features));
      auto nets = StyleNetworks::from_tensors(read_tensor_file(sv.weights));
      std::vector<ReferenceBundle> refs;
      for (const auto& spec : sv.refs) {
        const auto colon = spec.rfind(':');
        if (colon == std::string::npos) throw CLI::ValidationError("--ref expects image.png:semantic.tf");
        if (!nets.vgg) throw ValidationError("--ref needs vgg.* tensors in --weights");
        refs.push_back(make_reference_bundle(read_image(spec.substr(0, colon)),
                                             read_tensor_file(spec.substr(colon + 1)).feature_map("semantic"),
                                             *nets.vgg));
      }
      studio::StudioOptions opts;
      opts.seed = sv.seed;
      studio::Studio service(std::move(loaded.records), std::move(loaded.scene), std::move(nets), std::move(refs),
                             opts);
      httplib::Server server;
      service.mount(server, sv.static_dir);
      std::cout << "listening on http://" << sv.host << ":" << sv.port << std::endl;
      if (!server.listen(sv.host, sv.port)) throw Error("cannot listen on " + sv.host + ":" + std::to_string(sv.port));
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (globals.threads > 0) set_thread_count(globals.threads);
    action();
    return kOk;
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kParse;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kParse;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
}

}  // namespace fpgs::cli
