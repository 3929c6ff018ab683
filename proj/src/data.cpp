#include "s3d/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "s3d/error.hpp"

namespace s3d {

namespace fs = std::filesystem;
using nlohmann::json;

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& msg) { throw GenerationError("synthetic spec: " + msg); };
  if (num_classes < 1) fail("num_classes must be >= 1");
  if (!(fps > 0.0)) fail("fps must be positive");
  if (height < 4 || width < 4) fail("frame size must be at least 4x4");
  if (!(min_duration_sec > 0.0) || max_duration_sec < min_duration_sec) {
    fail("video duration range [min_duration_sec, max_duration_sec] is empty");
  }
  if (!(min_instance_sec > 0.0) || max_instance_sec < min_instance_sec) {
    fail("instance length range [min_instance_sec, max_instance_sec] is empty");
  }
  if (window_frames < 1) fail("window_frames must be positive");
  if (max_instance_sec > window_frames / fps) {
    fail("max_instance_sec exceeds the window duration (" + std::to_string(window_frames / fps) + " s)");
  }
  if (min_instances < 0 || max_instances < min_instances) fail("instances per video range is empty");
  if (max_instances * std::round(max_instance_sec * fps) > std::floor(min_duration_sec * fps)) {
    fail("max_instances * max_instance_sec exceeds min_duration_sec; instances cannot be placed without overlap");
  }
  if (noise_amplitude < 0.0) fail("noise_amplitude must be >= 0");
  if (train_videos < 0 || test_videos < 0) fail("video counts must be >= 0");
}

std::vector<std::string> SyntheticSpec::class_names() const {
  std::vector<std::string> names;
  for (int k = 1; k <= num_classes; ++k) names.push_back("class_" + std::to_string(k));
  return names;
}

json SyntheticSpec::to_json() const {
  return {{"num_classes", num_classes},
          {"min_duration_sec", min_duration_sec},
          {"max_duration_sec", max_duration_sec},
          {"fps", fps},
          {"height", height},
          {"width", width},
          {"min_instance_sec", min_instance_sec},
          {"max_instance_sec", max_instance_sec},
          {"min_instances", min_instances},
          {"max_instances", max_instances},
          {"noise_amplitude", noise_amplitude},
          {"square_intensity", square_intensity},
          {"speed_px_per_frame", speed_px_per_frame},
          {"window_frames", window_frames},
          {"train_videos", train_videos},
          {"test_videos", test_videos},
          {"seed", seed}};
}

SyntheticSpec SyntheticSpec::from_json(const json& j) {
  SyntheticSpec s;
  s.num_classes = j.value("num_classes", s.num_classes);
  s.min_duration_sec = j.value("min_duration_sec", s.min_duration_sec);
  s.max_duration_sec = j.value("max_duration_sec", s.max_duration_sec);
  s.fps = j.value("fps", s.fps);
  s.height = j.value("height", s.height);
  s.width = j.value("width", s.width);
  s.min_instance_sec = j.value("min_instance_sec", s.min_instance_sec);
  s.max_instance_sec = j.value("max_instance_sec", s.max_instance_sec);
  s.min_instances = j.value("min_instances", s.min_instances);
  s.max_instances = j.value("max_instances", s.max_instances);
  s.noise_amplitude = j.value("noise_amplitude", s.noise_amplitude);
  s.square_intensity = j.value("square_intensity", s.square_intensity);
  s.speed_px_per_frame = j.value("speed_px_per_frame", s.speed_px_per_frame);
  s.window_frames = j.value("window_frames", s.window_frames);
  s.train_videos = j.value("train_videos", s.train_videos);
  s.test_videos = j.value("test_videos", s.test_videos);
  s.seed = j.value("seed", s.seed);
  return s;
}

std::mt19937_64 video_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x53334456u};
  return std::mt19937_64(seq);
}

namespace {

void fill_noise(double* dst, std::size_t n, double amplitude, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) dst[i] = amplitude * u(rng);
}

long long positive_mod(long long a, long long m) { return ((a % m) + m) % m; }

}  // namespace

void render_instance_frame(TensorD& frames, long long t, long long age, int label, double origin_y,
                           double origin_x, const SyntheticSpec& spec) {
  if ((age / label) % 2 != 0) return;  // blink: off phase
  const double angle = 2.0 * std::numbers::pi * (label - 1) / spec.num_classes;
  const double y = origin_y + spec.speed_px_per_frame * static_cast<double>(age) * std::sin(angle);
  const double x = origin_x + spec.speed_px_per_frame * static_cast<double>(age) * std::cos(angle);
  const int side = std::max(1, spec.height / 4);
  const long long y0 = static_cast<long long>(std::floor(y));
  const long long x0 = static_cast<long long>(std::floor(x));
  for (int dy = 0; dy < side; ++dy) {
    for (int dx = 0; dx < side; ++dx) {
      const Index py = positive_mod(y0 + dy, spec.height);
      const Index px = positive_mod(x0 + dx, spec.width);
      for (Index c = 0; c < frames.dim(3); ++c) frames(t, py, px, c) = spec.square_intensity;
    }
  }
}

Video generate_video(const SyntheticSpec& spec, int index) {
  spec.validate();
  auto rng = video_rng(spec.seed, static_cast<std::uint64_t>(index));
  std::uniform_real_distribution<double> duration(spec.min_duration_sec, spec.max_duration_sec);
  const long long frames_total = std::max<long long>(1, std::llround(duration(rng) * spec.fps));

  Video v;
  char id[32];
  std::snprintf(id, sizeof(id), "video_%04d", index);
  v.id = id;
  v.split = index < spec.train_videos ? "train" : "test";
  v.frames = TensorD({frames_total, spec.height, spec.width, 3});
  fill_noise(v.frames.data(), static_cast<std::size_t>(v.frames.size()), spec.noise_amplitude, rng);

  std::uniform_int_distribution<int> count(spec.min_instances, spec.max_instances);
  const int n = count(rng);
  std::uniform_real_distribution<double> length_sec(spec.min_instance_sec, spec.max_instance_sec);
  std::vector<long long> lengths(static_cast<std::size_t>(n));
  long long occupied = 0;
  for (auto& l : lengths) {
    l = std::max<long long>(1, std::llround(length_sec(rng) * spec.fps));
    occupied += l;
  }
  const long long free = frames_total - occupied;
  if (free < 0) {
    throw GenerationError("video " + v.id + ": instances (" + std::to_string(occupied) +
                          " frames) do not fit in the video (" + std::to_string(frames_total) + " frames)");
  }
  std::uniform_int_distribution<long long> gap(0, free);
  std::vector<long long> cuts(static_cast<std::size_t>(n));
  for (auto& c : cuts) c = gap(rng);
  std::sort(cuts.begin(), cuts.end());
  std::uniform_int_distribution<int> label_dist(1, spec.num_classes);
  std::uniform_real_distribution<double> origin_y(0.0, spec.height), origin_x(0.0, spec.width);

  v.annotation.video_id = v.id;
  v.annotation.fps = spec.fps;
  v.annotation.num_frames = frames_total;
  long long before = 0;
  for (int i = 0; i < n; ++i) {
    const long long start = cuts[i] + before;
    before += lengths[i];
    const int label = label_dist(rng);
    const double oy = origin_y(rng), ox = origin_x(rng);
    for (long long t = start; t < start + lengths[i]; ++t) {
      render_instance_frame(v.frames, t, t - start, label, oy, ox, spec);
    }
    v.annotation.annotations.push_back(
        {label, static_cast<double>(start) / spec.fps, static_cast<double>(start + lengths[i]) / spec.fps});
  }
  return v;
}

std::vector<Video> generate_synthetic_dataset(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<Video> videos;
  for (int i = 0; i < spec.train_videos + spec.test_videos; ++i) videos.push_back(generate_video(spec, i));
  return videos;
}

namespace {

static_assert(std::endian::native == std::endian::little, "video files assume a little-endian host");

constexpr char kVideoMagic[4] = {'S', '3', 'D', 'V'};

std::string read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot write " + path.string());
  out << text;
}

}  // namespace

void save_video_tensor(const TensorD& frames, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot write " + path.string());
  out.write(kVideoMagic, 4);
  const char version = 1;
  out.write(&version, 1);
  const auto rank = static_cast<std::uint32_t>(frames.rank());
  out.write(reinterpret_cast<const char*>(&rank), 4);
  for (Index d : frames.shape()) {
    const auto v = static_cast<std::uint64_t>(d);
    out.write(reinterpret_cast<const char*>(&v), 8);
  }
  out.write(reinterpret_cast<const char*>(frames.data()), static_cast<std::streamsize>(frames.size() * sizeof(double)));
  if (!out) throw LoadError("write failed for " + path.string());
}

TensorD load_video_tensor(const fs::path& path) {
  const std::string bytes = read_all(path);
  std::size_t pos = 0;
  auto take = [&](void* dst, std::size_t n) {
    if (bytes.size() - pos < n) throw LoadError(path.string() + ": truncated video tensor");
    std::memcpy(dst, bytes.data() + pos, n);
    pos += n;
  };
  char magic[4];
  take(magic, 4);
  if (std::memcmp(magic, kVideoMagic, 4) != 0) throw LoadError(path.string() + ": not a video tensor (bad magic)");
  char version = 0;
  take(&version, 1);
  if (version != 1) throw LoadError(path.string() + ": unsupported video tensor version");
  std::uint32_t rank = 0;
  take(&rank, 4);
  if (rank != 4) throw LoadError(path.string() + ": expected a rank-4 video tensor");
  std::vector<Index> shape(rank);
  for (auto& d : shape) {
    std::uint64_t v = 0;
    take(&v, 8);
    if (v == 0 || v > (1ull << 32)) throw LoadError(path.string() + ": bad tensor dimension");
    d = static_cast<Index>(v);
  }
  TensorD t(shape);
  take(t.data(), static_cast<std::size_t>(t.size()) * sizeof(double));
  if (pos != bytes.size()) throw LoadError(path.string() + ": trailing bytes after video tensor");
  return t;
}

json DatasetManifest::to_json() const {
  json vids = json::array();
  for (const auto& e : videos) {
    vids.push_back({{"video_id", e.video_id},
                    {"split", e.split},
                    {"video_path", e.video_path},
                    {"annotation_path", e.annotation_path},
                    {"duration_sec", e.duration_sec},
                    {"num_frames", e.num_frames}});
  }
  return {{"format", "s3d-dataset"}, {"class_names", class_names}, {"spec", spec.to_json()}, {"videos", vids}};
}

DatasetManifest DatasetManifest::from_json(const json& j) {
  try {
    DatasetManifest m;
    m.spec = SyntheticSpec::from_json(j.at("spec"));
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    for (const auto& v : j.at("videos")) {
      m.videos.push_back({v.at("video_id").get<std::string>(), v.value("split", std::string("train")),
                          v.at("video_path").get<std::string>(), v.at("annotation_path").get<std::string>(),
                          v.at("duration_sec").get<double>(), v.at("num_frames").get<long long>()});
    }
    return m;
  } catch (const json::exception& e) {
    throw LoadError(std::string("malformed dataset manifest: ") + e.what());
  }
}

DatasetManifest DatasetManifest::load(const fs::path& root) {
  const fs::path path = root / "manifest.json";
  try {
    return from_json(json::parse(read_all(path)));
  } catch (const json::parse_error& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

std::vector<ManifestEntry> DatasetManifest::split(const std::string& name) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : videos) {
    if (name == "all" || e.split == name) out.push_back(e);
  }
  return out;
}

DatasetManifest write_dataset(const fs::path& root, const SyntheticSpec& spec, const std::vector<Video>& videos) {
  fs::create_directories(root / "videos");
  fs::create_directories(root / "annotations");
  DatasetManifest m;
  m.spec = spec;
  m.class_names = spec.class_names();
  for (const auto& v : videos) {
    ManifestEntry e{v.id, v.split, "videos/" + v.id + ".s3dv", "annotations/" + v.id + ".json", v.duration_sec(),
                    v.frames.dim(0)};
    save_video_tensor(v.frames, root / e.video_path);
    write_text(root / e.annotation_path, annotation_to_json(v.annotation, m.class_names).dump(2) + "\n");
    m.videos.push_back(e);
  }
  write_text(root / "manifest.json", m.to_json().dump(2) + "\n");
  return m;
}

Video load_video(const fs::path& root, const ManifestEntry& entry, std::vector<std::string>& class_names) {
  Video v;
  v.id = entry.video_id;
  v.split = entry.split;
  v.frames = load_video_tensor(root / entry.video_path);
  json j;
  try {
    j = json::parse(read_all(root / entry.annotation_path));
  } catch (const json::parse_error& e) {
    throw LoadError(entry.annotation_path + ": " + e.what());
  }
  auto anns = annotations_from_json(j, class_names, false);
  if (anns.size() != 1) throw LoadError(entry.annotation_path + ": expected one annotation object");
  v.annotation = std::move(anns.front());
  return v;
}

std::vector<GroundTruth> window_annotations(const std::vector<LabeledInterval>& annotations,
                                            const WindowPlacement& placement, double retention) {
  const double lo = placement.window_start_sec;
  const double hi = placement.window_start_sec + placement.window_duration_sec;
  std::vector<GroundTruth> out;
  for (const auto& a : annotations) {
    const double s = std::max(a.start_sec, lo);
    const double e = std::min(a.end_sec, hi);
    const double original = a.end_sec - a.start_sec;
    if (e <= s || e - s < retention * original) continue;
    const double ns = std::clamp(placement.to_normalized(s), 0.0, 1.0);
    const double ne = std::clamp(placement.to_normalized(e), 0.0, 1.0);
    if (ne > ns) out.push_back({Span::from_interval(ns, ne), a.label});
  }
  return out;
}

TrainingWindow make_window(const TensorD& video, const std::vector<LabeledInterval>& annotations, long long start,
                           long long window_frames, double fps, double pad_noise) {
  TrainingWindow w;
  w.frames = extract_frames(video, start, window_frames, pad_noise);
  w.start_frame = start;
  w.placement = {static_cast<double>(start) / fps, static_cast<double>(window_frames) / fps, fps};
  w.annotations = window_annotations(annotations, w.placement);
  return w;
}

std::vector<TrainingWindow> make_windows(const TensorD& video, const std::vector<LabeledInterval>& annotations,
                                         long long window_frames, long long stride_frames, double fps,
                                         double pad_noise) {
  std::vector<TrainingWindow> out;
  for (long long start : window_offsets(video.dim(0), window_frames, stride_frames)) {
    out.push_back(make_window(video, annotations, start, window_frames, fps, pad_noise));
  }
  return out;
}

TensorD spatial_jitter(const TensorD& frames, int crop_y, int crop_x, int crop_margin, bool flip) {
  const Volume v = volume_of(frames);
  if (crop_margin == 0 && !flip) return frames;
  const Index ch = v.height - crop_margin, cw = v.width - crop_margin;
  if (ch < 1 || cw < 1) throw ConfigError("jitter: crop margin leaves no pixels");
  TensorD out(v.shape());
  for (Index l = 0; l < v.length; ++l) {
    for (Index y = 0; y < v.height; ++y) {
      const Index sy = crop_y + y * ch / v.height;
      for (Index x = 0; x < v.width; ++x) {
        const Index xx = flip ? v.width - 1 - x : x;
        const Index sx = crop_x + xx * cw / v.width;
        for (Index c = 0; c < v.channels; ++c) out(l, y, x, c) = frames(l, sy, sx, c);
      }
    }
  }
  return out;
}

TrainingWindow jitter(const TrainingWindow& window, const TensorD& video,
                      const std::vector<LabeledInterval>& annotations, const JitterSettings& settings,
                      std::mt19937_64& rng, double pad_noise) {
  TrainingWindow out = window;
  if (settings.max_shift_frames > 0) {
    std::uniform_int_distribution<int> shift(-settings.max_shift_frames, settings.max_shift_frames);
    const long long start = std::max<long long>(0, window.start_frame + shift(rng));
    if (start != window.start_frame) {
      out = make_window(video, annotations, start, window.frames.dim(0), window.placement.fps, pad_noise);
    }
  }
  int crop_y = 0, crop_x = 0;
  if (settings.crop_margin > 0) {
    std::uniform_int_distribution<int> pos(0, settings.crop_margin);
    crop_y = pos(rng);
    crop_x = pos(rng);
  }
  bool flip = false;
  if (settings.flip_probability > 0.0) {
    std::bernoulli_distribution coin(settings.flip_probability);
    flip = coin(rng);
  }
  out.frames = spatial_jitter(out.frames, crop_y, crop_x, settings.crop_margin, flip);
  return out;
}

}  // namespace s3d
