// s3d: dataset generation, training, detection, evaluation and inspection.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "s3d/config.hpp"
#include "s3d/error.hpp"
#include "s3d/model_io.hpp"
#include "s3d/parallel.hpp"
#include "s3d/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace s3d;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool force = false;
};

RunConfig resolve_config(const Globals& g) {
  RunConfig c = g.config_path.empty() ? RunConfig{} : RunConfig::load(g.config_path);
  if (g.seed) {
    c.seed = *g.seed;
    c.synthetic.seed = *g.seed;
  }
  if (g.threads) c.threads = *g.threads;
  return c;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

// Annotations come either from a dataset directory (one split) or from a JSON
// file holding one annotation object or an array of them.
std::vector<VideoAnnotation> read_annotations(const fs::path& path, const std::string& split,
                                              std::vector<std::string>& class_names) {
  if (fs::is_directory(path)) return load_split_annotations(path, split, class_names);
  return annotations_from_json(read_json(path), class_names, true);
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += ch;
    }
  }
  return out;
}

// ---------------------------------------------------------------- commands

int cmd_gen(const Globals& g, const fs::path& out_dir, std::optional<int> train, std::optional<int> test) {
  RunConfig c = resolve_config(g);
  if (train) c.synthetic.train_videos = *train;
  if (test) c.synthetic.test_videos = *test;
  c.synthetic.validate();
  if (fs::exists(out_dir) && !fs::is_empty(out_dir)) {
    if (!g.force) throw InputError("output directory " + out_dir.string() + " is not empty (use --force)");
    fs::remove_all(out_dir);
  }
  const auto videos = generate_synthetic_dataset(c.synthetic);
  const auto manifest = write_dataset(out_dir, c.synthetic, videos);
  std::size_t instances = 0;
  double seconds = 0.0;
  for (const auto& v : videos) {
    instances += v.annotation.annotations.size();
    seconds += v.duration_sec();
  }
  std::cout << "dataset " << out_dir.string() << ": " << manifest.videos.size() << " videos ("
            << manifest.split("train").size() << " train, " << manifest.split("test").size() << " test), "
            << manifest.class_names.size() << " classes, " << instances << " instances, " << std::fixed
            << std::setprecision(1) << seconds << " s of video\n";
  return 0;
}

struct TrainArgs {
  fs::path data, out, log, checkpoint_dir, resume;
  std::optional<int> epochs, batch_size, overfit_steps, checkpoint_every;
  std::optional<double> lr;
  std::optional<long long> stride;
  bool overfit = false;
  bool no_jitter = false;
  bool quiet = false;
};

int cmd_train(const Globals& g, const TrainArgs& a) {
  RunConfig c = resolve_config(g);
  if (a.epochs) c.train.epochs = *a.epochs;
  if (a.batch_size) c.train.batch_size = *a.batch_size;
  if (a.stride) c.train.stride_frames = *a.stride;
  if (a.lr) c.network.optimizer.learning_rate = *a.lr;
  if (a.overfit) c.train.overfit_one_window = true;
  if (a.overfit_steps) c.train.overfit_steps = *a.overfit_steps;
  if (a.checkpoint_every) c.train.checkpoint_every = *a.checkpoint_every;
  if (a.no_jitter) c.train.jitter = false;
  c.validate();

  TrainOptions opts;
  opts.data_dir = a.data;
  opts.checkpoint_dir = a.checkpoint_dir;
  opts.resume_from = a.resume;
  opts.threads = thread_count(c.threads);
  const auto t0 = std::chrono::steady_clock::now();
  opts.on_step = [&](const TrainLogRow& r) {
    if (a.quiet || r.step % 50 != 0) return;
    const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char buf[160];
    std::snprintf(buf, sizeof(buf), "epoch %d step %lld loss %.5f (loc %.5f, conf %.5f, act %.5f) %.1fs\n", r.epoch,
                  r.step, r.loss.total, r.loss.loc, r.loss.conf, r.loss.act, el);
    std::cerr << buf;
  };

  const auto result = train_model(c, opts);
  save_model(result.net, a.out);
  const fs::path log = a.log.empty() ? fs::path(a.out.string() + ".loss.csv") : a.log;
  write_loss_csv(log, result.log);
  std::cout << "model " << a.out.string() << ": " << result.net.params().parameter_count() << " parameters, "
            << result.log.size() << " steps, loss log " << log.string() << "\n";
  if (!result.log.empty()) {
    const double first = result.log.front().loss.total;
    const double last = result.log.back().loss.total;
    std::cout << "loss first " << first << " last " << last << " ratio " << last / first << "\n";
  }
  return 0;
}

struct DetectArgs {
  fs::path model, data, out;
  std::string split = "test";
  std::optional<double> score_threshold, nms_threshold;
  std::optional<long long> stride;
};

int cmd_detect(const Globals& g, const DetectArgs& a) {
  RunConfig c = resolve_config(g);
  if (a.score_threshold) c.inference.score_threshold = *a.score_threshold;
  if (a.nms_threshold) c.inference.nms_threshold = *a.nms_threshold;
  if (a.stride) c.inference_stride_frames = *a.stride;
  const Network net = load_model(a.model);
  if (!g.config_path.empty() && net.config().to_json() != c.network.to_json()) {
    throw ConfigError("model " + a.model.string() + " was built with a different network than the configuration");
  }
  c.network = net.config();
  c.synthetic.num_classes = net.config().num_classes;
  c.validate();

  const auto manifest = DatasetManifest::load(a.data);
  const auto results = detect_dataset(net, a.data, a.split, c.inference, c.inference_stride(), thread_count(c.threads));
  json all = json::array();
  std::size_t count = 0;
  for (const auto& v : results) {
    all.push_back(detections_to_json(v.video_id, v.detections, manifest.class_names));
    count += v.detections.size();
  }
  write_text(a.out, all.dump(2) + "\n");
  std::cout << "detections " << a.out.string() << ": " << results.size() << " videos, " << count << " detections\n";
  return 0;
}

struct EvalArgs {
  fs::path detections, annotations, csv;
  std::string split = "test";
  std::vector<double> thresholds;
};

int cmd_eval(const Globals& g, const EvalArgs& a) {
  RunConfig c = resolve_config(g);
  if (!a.thresholds.empty()) c.eval.iou_thresholds = a.thresholds;
  c.eval.validate();

  std::vector<std::string> classes;
  const auto truths = read_annotations(a.annotations, a.split, classes);
  auto dets = detections_from_json(read_json(a.detections), classes);
  // Videos outside the evaluated annotations (e.g. the other split) are not scored.
  std::set<std::string> known;
  for (const auto& t : truths) known.insert(t.video_id);
  const auto outside = std::erase_if(dets, [&](const VideoDetections& v) { return !known.contains(v.video_id); });
  if (outside > 0) std::cerr << "eval: ignoring detections for " << outside << " video(s) without annotations\n";
  const auto r = mean_ap(dets, truths, static_cast<int>(classes.size()), c.eval);

  std::cout << std::left << std::setw(12) << "IoU";
  for (double t : r.thresholds) std::cout << std::setw(8) << t;
  std::cout << "\n" << std::fixed << std::setprecision(4);
  for (std::size_t k = 0; k < classes.size(); ++k) {
    std::cout << std::setw(12) << classes[k];
    for (std::size_t t = 0; t < r.thresholds.size(); ++t) {
      const double ap = r.class_ap[t][k];
      std::cout << std::setw(8) << (std::isnan(ap) ? std::string("-") : std::to_string(ap).substr(0, 6));
    }
    std::cout << "\n";
  }
  std::cout << std::setw(12) << "mAP";
  for (double m : r.mean_ap) std::cout << std::setw(8) << m;
  std::cout << "\n" << std::defaultfloat;

  if (!a.csv.empty()) {
    std::ostringstream csv;
    csv << "iou_threshold,mAP";
    for (const auto& name : classes) csv << "," << name;
    csv << "\n" << std::setprecision(17);
    for (std::size_t t = 0; t < r.thresholds.size(); ++t) {
      csv << r.thresholds[t] << "," << r.mean_ap[t];
      for (std::size_t k = 0; k < classes.size(); ++k) {
        csv << ",";
        if (!std::isnan(r.class_ap[t][k])) csv << r.class_ap[t][k];
      }
      csv << "\n";
    }
    write_text(a.csv, csv.str());
  }
  return 0;
}

int cmd_tile(const Globals& g, const std::vector<int>& layers, const std::vector<double>& ratios, bool list) {
  // Unspecified axes default to the full-scale network's grid, not the run's.
  (void)g;
  SpanGridConfig grid = NetworkConfig::full_scale().spans;
  if (!layers.empty()) grid.layer_lengths = layers;
  if (!ratios.empty()) grid.ratios = ratios;
  grid.validate();
  const auto tiled = tile_default_spans(grid);
  if (list) {
    std::cout << "index,layer_length,cell,ratio,center,length\n" << std::setprecision(10);
    for (std::size_t i = 0; i < tiled.size(); ++i) {
      const auto& o = tiled.origins[i];
      std::cout << i << "," << grid.layer_lengths[o.layer] << "," << o.cell << "," << grid.ratios[o.ratio] << ","
                << tiled.spans[i].center << "," << tiled.spans[i].length << "\n";
    }
  }
  std::cout << tiled.size() << " spans\n";
  return 0;
}

int cmd_bench(const Globals& g, const fs::path& model, int windows) {
  RunConfig c = resolve_config(g);
  if (windows < 1) throw ConfigError("--windows must be >= 1");
  const Network net = model.empty() ? Network::initialized(c.network, c.seed) : load_model(model);
  c.network = net.config();
  const Volume in = net.config().input;
  const int threads = thread_count(c.threads);

  std::vector<TensorD> inputs;
  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < std::min(windows, 4); ++i) {
    TensorD t(in.shape());
    for (Index j = 0; j < t.size(); ++j) t.data()[j] = u(rng);
    inputs.push_back(std::move(t));
  }
  double sink = 0.0;
  auto run = [&](int n) {
    std::vector<double> local(static_cast<std::size_t>(n));
    parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t i) {
      local[i] = net.forward(inputs[i % inputs.size()]).sum();
    });
    for (double v : local) sink += v;
  };
  run(3);  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  run(windows);
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double fps = static_cast<double>(windows) * static_cast<double>(in.length) / elapsed;
  std::cout << "network " << net.config().name << " input " << in.str() << "\n"
            << "config_hash " << c.hash() << "\n"
            << "threads " << threads << "\n"
            << "windows " << windows << "\n"
            << "elapsed_sec " << elapsed << "\n"
            << "fps " << fps << "\n";
  if (!std::isfinite(sink)) std::cerr << "warning: non-finite network output\n";
  return 0;
}

int cmd_plot(const Globals&, const fs::path& det_path, const fs::path& ann_path, const std::string& split,
             const fs::path& out) {
  std::vector<std::string> classes;
  std::vector<VideoAnnotation> truths;
  if (!ann_path.empty()) truths = read_annotations(ann_path, split, classes);
  std::vector<VideoDetections> dets;
  if (!det_path.empty()) {
    const json j = read_json(det_path);
    // Unseen labels extend the vocabulary, so detections can be plotted alone.
    auto collect = [&](const json& obj) {
      for (const auto& d : obj.value("detections", json::array())) {
        const auto label = d.value("label", std::string());
        if (std::find(classes.begin(), classes.end(), label) == classes.end()) classes.push_back(label);
      }
    };
    if (j.is_array()) {
      for (const auto& obj : j) collect(obj);
    } else {
      collect(j);
    }
    dets = detections_from_json(j, classes);
  }

  std::vector<std::string> order;
  std::map<std::string, double> duration;
  auto touch = [&](const std::string& id, double end) {
    if (!duration.count(id)) order.push_back(id);
    duration[id] = std::max(duration[id], end);
  };
  for (const auto& v : truths) {
    touch(v.video_id, v.fps > 0.0 ? static_cast<double>(v.num_frames) / v.fps : 0.0);
    for (const auto& a : v.annotations) touch(v.video_id, a.end_sec);
  }
  for (const auto& v : dets) {
    touch(v.video_id, 0.0);
    for (const auto& d : v.detections) touch(v.video_id, d.end_sec);
  }

  constexpr double kLeft = 140.0, kWidth = 900.0, kTrack = 60.0, kBar = 16.0;
  const double height = 20.0 + kTrack * static_cast<double>(order.size());
  std::ostringstream svg;
  svg << std::fixed << std::setprecision(2);
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kLeft + kWidth + 20 << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::string& id = order[i];
    const double y = 10.0 + kTrack * static_cast<double>(i);
    const double scale = duration[id] > 0.0 ? kWidth / duration[id] : 0.0;
    svg << "  <g class=\"video\" data-video=\"" << xml_escape(id) << "\">\n"
        << "    <text x=\"4\" y=\"" << y + kBar << "\">" << xml_escape(id) << "</text>\n"
        << "    <line x1=\"" << kLeft << "\" y1=\"" << y + kBar + 2 << "\" x2=\"" << kLeft + kWidth << "\" y2=\""
        << y + kBar + 2 << "\" stroke=\"#cccccc\"/>\n";
    for (const auto& v : truths) {
      if (v.video_id != id) continue;
      for (const auto& a : v.annotations) {
        svg << "    <rect class=\"gt\" x=\"" << kLeft + a.start_sec * scale << "\" y=\"" << y << "\" width=\""
            << (a.end_sec - a.start_sec) * scale << "\" height=\"" << kBar << "\" fill=\"black\"><title>"
            << xml_escape(classes[a.label - 1]) << "</title></rect>\n";
      }
    }
    for (const auto& v : dets) {
      if (v.video_id != id) continue;
      for (const auto& d : v.detections) {
        const double x = kLeft + d.start_sec * scale;
        svg << "    <rect class=\"pred\" x=\"" << x << "\" y=\"" << y + kBar + 4 << "\" width=\""
            << (d.end_sec - d.start_sec) * scale << "\" height=\"" << kBar << "\" fill=\"green\" fill-opacity=\""
            << std::clamp(0.3 + 0.7 * d.score, 0.3, 1.0) << "\"><title>" << xml_escape(classes[d.label - 1])
            << "</title></rect>\n"
            << "    <text x=\"" << x << "\" y=\"" << y + 2 * kBar + 14 << "\">" << std::setprecision(2) << d.score
            << "</text>\n";
      }
    }
    svg << "  </g>\n";
  }
  svg << "</svg>\n";
  write_text(out, svg.str());
  std::cout << "plot " << out.string() << ": " << order.size() << " videos\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Single-shot temporal activity detection on synthetic untrimmed video"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed for every random stream");
  app.add_option("--threads", g.threads, "Worker threads (default: S3D_THREADS, then hardware)");
  app.add_flag("--force", g.force, "Overwrite existing outputs");

  fs::path gen_out;
  std::optional<int> gen_train, gen_test;
  auto* gen = app.add_subcommand("gen", "Generate the synthetic dataset");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--train-videos", gen_train);
  gen->add_option("--test-videos", gen_test);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model on a dataset's training split");
  train->add_option("--data", ta.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", ta.out, "Model file to write")->required();
  train->add_option("--log", ta.log, "Loss CSV (default: <out>.loss.csv)");
  train->add_option("--epochs", ta.epochs);
  train->add_option("--batch-size", ta.batch_size);
  train->add_option("--lr", ta.lr);
  train->add_option("--stride", ta.stride, "Training window stride in frames");
  train->add_flag("--no-jitter", ta.no_jitter);
  train->add_flag("--overfit-one-window", ta.overfit, "Repeat one window to check that the loss can fall");
  train->add_option("--overfit-steps", ta.overfit_steps);
  train->add_option("--checkpoint-dir", ta.checkpoint_dir);
  train->add_option("--checkpoint-every", ta.checkpoint_every, "Epochs between checkpoints");
  train->add_option("--resume", ta.resume, "Checkpoint directory to resume from")->check(CLI::ExistingDirectory);
  train->add_flag("--quiet", ta.quiet);

  DetectArgs da;
  auto* detect = app.add_subcommand("detect", "Run sliding-window detection over a dataset split");
  detect->add_option("--model", da.model)->required()->check(CLI::ExistingFile);
  detect->add_option("--data", da.data)->required()->check(CLI::ExistingDirectory);
  detect->add_option("--out", da.out, "Detection JSON to write")->required();
  detect->add_option("--split", da.split)->check(CLI::IsMember({"train", "test", "all"}));
  detect->add_option("--score-threshold", da.score_threshold);
  detect->add_option("--nms-threshold", da.nms_threshold);
  detect->add_option("--stride", da.stride, "Inference window stride in frames");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Score detections against annotations (mAP per IoU threshold)");
  eval->add_option("--detections", ea.detections)->required()->check(CLI::ExistingFile);
  eval->add_option("--annotations", ea.annotations, "Dataset directory or annotation JSON")
      ->required()
      ->check(CLI::ExistingPath);
  eval->add_option("--split", ea.split)->check(CLI::IsMember({"train", "test", "all"}));
  eval->add_option("--thresholds", ea.thresholds)->delimiter(',');
  eval->add_option("--csv", ea.csv);

  std::vector<int> tile_layers;
  std::vector<double> tile_ratios;
  bool tile_list = false;
  auto* tile = app.add_subcommand("tile", "Print the default span tiling");
  tile->add_option("--layers", tile_layers)->delimiter(',');
  tile->add_option("--ratios", tile_ratios)->delimiter(',');
  tile->add_flag("--list", tile_list, "Print every span");

  fs::path bench_model;
  int bench_windows = 32;
  auto* bench = app.add_subcommand("bench", "Measure forward throughput in frames per second");
  bench->add_option("--model", bench_model)->check(CLI::ExistingFile);
  bench->add_option("--windows", bench_windows);

  fs::path plot_det, plot_ann, plot_out;
  std::string plot_split = "test";
  auto* plot = app.add_subcommand("plot", "Draw ground truth and detections as an SVG timeline");
  plot->add_option("--detections", plot_det)->check(CLI::ExistingFile);
  plot->add_option("--annotations", plot_ann)->check(CLI::ExistingPath);
  plot->add_option("--split", plot_split)->check(CLI::IsMember({"train", "test", "all"}));
  plot->add_option("--out", plot_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen(g, gen_out, gen_train, gen_test);
    if (*train) return cmd_train(g, ta);
    if (*detect) return cmd_detect(g, da);
    if (*eval) return cmd_eval(g, ea);
    if (*tile) return cmd_tile(g, tile_layers, tile_ratios, tile_list);
    if (*bench) return cmd_bench(g, bench_model, bench_windows);
    if (*plot) return cmd_plot(g, plot_det, plot_ann, plot_split, plot_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
