#include "cleansplat/tmr.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "cleansplat/png_io.hpp"

namespace cleansplat {

void TmrConfig::validate() const {
  for (double v : {coverage_refine, coverage_valid, merge_iou, sr_threshold, match_iou, propagation_overlap}) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("TMR thresholds must lie in [0,1]");
  }
  if (memory < 1 || dilation < 0 || max_prompt_points < 1) {
    throw std::invalid_argument("TMR memory and prompt count must be >= 1, dilation >= 0");
  }
}

BinaryMask OracleSegmenter::segment(std::size_t frame, std::span<const Pixel> prompts,
                                    const BinaryMask& source) const {
  if (frame >= frames_.size()) throw std::out_of_range("oracle segmenter has no frame " + std::to_string(frame));
  const IdMap& ids = frames_[frame];
  std::map<std::uint16_t, int> things;
  std::map<std::uint16_t, int> stuff;
  for (const Pixel& p : prompts) {
    const std::uint16_t id = ids.at(p.x, p.y);
    if (id == 0) continue;
    ++(stuff_.count(id) ? stuff : things)[id];
  }
  const auto& votes = things.empty() ? stuff : things;
  BinaryMask out(source.width(), source.height());
  if (votes.empty()) return out;
  std::uint16_t winner = 0;
  int best = 0;
  for (const auto& [id, count] : votes) {
    if (count > best) {
      winner = id;
      best = count;
    }
  }
  for (std::size_t i = 0; i < ids.ids.size(); ++i) out.set(i, ids.ids[i] == winner);
  return out;
}

std::vector<Pixel> sample_prompts(const ComponentRegion& component, int k, std::uint64_t seed) {
  const auto& px = component.pixels;
  const std::size_t n = px.size();
  const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 0)), n);
  std::vector<Pixel> out;
  if (count == 0) return out;
  double cx = 0.0, cy = 0.0;
  for (const Pixel& p : px) {
    cx += p.x;
    cy += p.y;
  }
  cx /= static_cast<double>(n);
  cy /= static_cast<double>(n);
  std::size_t start = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const double d = (px[i].x - cx) * (px[i].x - cx) + (px[i].y - cy) * (px[i].y - cy);
    if (d < best) {
      best = d;
      start = i;
    }
  }
  auto sq = [&](std::size_t i, std::size_t j) {
    const long dx = px[i].x - px[j].x;
    const long dy = px[i].y - px[j].y;
    return dx * dx + dy * dy;
  };
  std::vector<long> dist(n);
  for (std::size_t i = 0; i < n; ++i) dist[i] = sq(i, start);
  std::vector<std::uint8_t> picked(n, 0);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> ties;
  for (std::size_t t = 0; t < count; ++t) {
    long far = -1;
    ties.clear();
    for (std::size_t i = 0; i < n; ++i) {
      if (picked[i]) continue;
      if (dist[i] > far) {
        far = dist[i];
        ties.assign(1, i);
      } else if (dist[i] == far) {
        ties.push_back(i);
      }
    }
    std::size_t choice = ties.front();
    if (ties.size() > 1) {
      choice = ties[std::uniform_int_distribution<std::size_t>(0, ties.size() - 1)(rng)];
    }
    picked[choice] = 1;
    out.push_back(px[choice]);
    for (std::size_t i = 0; i < n; ++i) dist[i] = std::min(dist[i], sq(i, choice));
  }
  return out;
}

ComponentRegion mask_region(const BinaryMask& mask) {
  ComponentRegion r;
  r.min_x = mask.width();
  r.min_y = mask.height();
  r.max_x = r.max_y = -1;
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (!mask.test(x, y)) continue;
      r.pixels.push_back({x, y});
      r.min_x = std::min(r.min_x, x);
      r.min_y = std::min(r.min_y, y);
      r.max_x = std::max(r.max_x, x);
      r.max_y = std::max(r.max_y, y);
    }
  }
  return r;
}

double coverage(const BinaryMask& prompt_mask, const BinaryMask& segment) {
  const std::size_t total = segment.count();
  if (total == 0) return 0.0;
  return static_cast<double>((prompt_mask & segment).count()) / static_cast<double>(total);
}

namespace {

std::uint64_t prompt_seed(std::size_t frame, std::uint64_t salt) {
  return (static_cast<std::uint64_t>(frame) << 32) ^ (salt * 0x9e3779b97f4a7c15ULL);
}

}  // namespace

std::vector<RefinedMask> spatial_refine(const BinaryMask& transient, std::size_t frame,
                                        const PromptableSegmenter& segmenter, const TmrConfig& cfg) {
  std::vector<RefinedMask> out;
  const auto components = connected_components(transient);
  for (std::size_t c = 0; c < components.size(); ++c) {
    const auto prompts = sample_prompts(components[c], cfg.max_prompt_points, prompt_seed(frame, c));
    const BinaryMask source = components[c].to_mask(transient.width(), transient.height());
    BinaryMask seg = segmenter.segment(frame, prompts, source);
    const double cs = coverage(transient, seg);
    if (cs > cfg.coverage_refine) out.push_back({std::move(seg), cs});
  }
  return out;
}

void TrackedObject::refresh_max_size() {
  max_mask_size = 0;
  for (const auto& [f, m] : masks) max_mask_size = std::max(max_mask_size, m.count());
}

std::size_t merge_objects(std::vector<TrackedObject>& objects, std::size_t frame, const TmrConfig& cfg) {
  std::size_t merges = 0;
  bool changed = true;
  while (changed) {
    changed = false;
    std::sort(objects.begin(), objects.end(),
              [](const TrackedObject& a, const TrackedObject& b) { return a.label < b.label; });
    for (std::size_t i = 0; i < objects.size() && !changed; ++i) {
      const auto mi = objects[i].masks.find(frame);
      if (mi == objects[i].masks.end()) continue;
      for (std::size_t j = i + 1; j < objects.size(); ++j) {
        const auto mj = objects[j].masks.find(frame);
        if (mj == objects[j].masks.end()) continue;
        if (iou(mi->second, mj->second) <= cfg.merge_iou) continue;
        TrackedObject& keep = objects[i];
        for (auto& [f, m] : objects[j].masks) {
          auto it = keep.masks.find(f);
          if (it == keep.masks.end()) {
            keep.masks.emplace(f, std::move(m));
          } else {
            it->second |= m;
          }
        }
        keep.refresh_max_size();
        objects.erase(objects.begin() + static_cast<std::ptrdiff_t>(j));
        ++merges;
        changed = true;
        break;
      }
    }
  }
  return merges;
}

namespace {

class Tracker {
 public:
  Tracker(const PromptableSegmenter& segmenter, const TmrConfig& cfg) : segmenter_(segmenter), cfg_(cfg) {}

  std::vector<TrackedObject> objects;

  // Nearest stored frame g != f in the pass direction (direction 0 searches
  // both sides, past wins ties) such that at most N_m frames lie between them.
  std::optional<std::size_t> context_frame(const TrackedObject& obj, std::size_t f, int direction) const {
    std::optional<std::size_t> best;
    long best_gap = std::numeric_limits<long>::max();
    for (const auto& [g, m] : obj.masks) {
      const long delta = static_cast<long>(f) - static_cast<long>(g);
      if (delta == 0) continue;
      if (direction > 0 && delta < 0) continue;
      if (direction < 0 && delta > 0) continue;
      const long gap = std::labs(delta);
      if (gap - 1 > cfg_.memory) continue;
      if (gap < best_gap || (gap == best_gap && g < f)) {
        best_gap = gap;
        best = g;
      }
    }
    return best;
  }

  std::optional<BinaryMask> resegment(const TrackedObject& obj, std::size_t f, std::size_t g,
                                      std::uint64_t pass) const {
    const BinaryMask& source = obj.masks.at(g);
    const auto prompts = sample_prompts(mask_region(source), cfg_.max_prompt_points,
                                        prompt_seed(f, (static_cast<std::uint64_t>(obj.label) << 2) | pass));
    BinaryMask m = segmenter_.segment(f, prompts, source);
    if (m.none() || coverage(source, m) < cfg_.propagation_overlap) return std::nullopt;
    return m;
  }

  void extend(std::size_t f, int direction, std::uint64_t pass) {
    for (auto& obj : objects) {
      if (obj.masks.count(f)) continue;
      const auto g = context_frame(obj, f, direction);
      if (!g) continue;
      if (auto m = resegment(obj, f, *g, pass)) obj.masks.emplace(f, std::move(*m));
    }
  }

  void associate(std::size_t f, const std::vector<BinaryMask>& detections) {
    for (const BinaryMask& d : detections) {
      TrackedObject* match = nullptr;
      double best = -1.0;
      for (auto& obj : objects) {
        // Last stored mask at or before f, inside the memory window.
        auto it = obj.masks.upper_bound(f);
        if (it == obj.masks.begin()) continue;
        --it;
        if (f - it->first > static_cast<std::size_t>(cfg_.memory) + 1) continue;
        const double v = iou(d, it->second);
        if (v > best) {
          best = v;
          match = &obj;
        }
      }
      if (match && best >= cfg_.match_iou) {
        match->masks.emplace(f, d);  // keeps an existing mask for f
        continue;
      }
      TrackedObject obj;
      obj.label = next_label_++;
      obj.masks.emplace(f, d);
      objects.push_back(std::move(obj));
    }
  }

  void final_pass(std::size_t f) {
    for (auto& obj : objects) {
      const auto g = context_frame(obj, f, 0);
      if (!g) continue;
      if (auto m = resegment(obj, f, *g, 3)) obj.masks[f] = std::move(*m);
    }
  }

  void merge(std::size_t f) { merge_objects(objects, f, cfg_); }

 private:
  const PromptableSegmenter& segmenter_;
  const TmrConfig& cfg_;
  std::uint32_t next_label_ = 1;
};

}  // namespace

std::vector<TrackedObject> propagate(const std::vector<std::vector<BinaryMask>>& detections,
                                     const PromptableSegmenter& segmenter, const TmrConfig& cfg) {
  cfg.validate();
  Tracker tracker(segmenter, cfg);
  const std::size_t n = detections.size();
  for (std::size_t f = 0; f < n; ++f) {
    tracker.extend(f, +1, 1);
    tracker.associate(f, detections[f]);
    tracker.merge(f);
  }
  for (std::size_t f = n; f-- > 0;) {
    tracker.extend(f, -1, 2);
    tracker.merge(f);
  }
  for (std::size_t f = 0; f < n; ++f) {
    tracker.final_pass(f);
    tracker.merge(f);
  }
  for (auto& obj : tracker.objects) obj.refresh_max_size();
  return std::move(tracker.objects);
}

StabilityResult stability_ratio(const TrackedObject& object, const std::vector<BinaryMask>& prompts,
                                const std::vector<Image>& residuals, const TmrConfig& cfg) {
  StabilityResult out;
  std::size_t max_size = 0;
  for (const auto& [f, m] : object.masks) max_size = std::max(max_size, m.count());
  double sum = 0.0;
  for (const auto& [f, m] : object.masks) {
    if (f >= prompts.size() || f >= residuals.size()) throw std::out_of_range("no prompt mask for frame");
    const std::size_t size = m.count();
    if (size == 0) continue;
    const std::size_t inter = (prompts[f] & m).count();
    const double local = static_cast<double>(inter) / static_cast<double>(size);
    if (!(local > cfg.coverage_valid)) continue;
    const Image& r = residuals[f];
    if (r.width() != m.width() || r.height() != m.height() || r.channels() != 1) {
      throw DimensionError("residual image does not match mask");
    }
    double rsum = 0.0;
    for (std::size_t p = 0; p < m.pixel_count(); ++p) {
      if (m.test(p)) rsum += r.data()[p];
    }
    const double mean_residual = rsum / static_cast<double>(size);
    const double global = static_cast<double>(inter) / static_cast<double>(max_size);
    sum += mean_residual * global;
    out.valid_frames.push_back(f);
  }
  out.ratio = out.valid_frames.empty() ? 0.0 : sum / static_cast<double>(out.valid_frames.size());
  return out;
}

void score_objects(std::vector<TrackedObject>& objects, const std::vector<BinaryMask>& prompts,
                   const std::vector<Image>& residuals, const TmrConfig& cfg) {
  for (auto& obj : objects) {
    obj.refresh_max_size();
    obj.local_coverage.clear();
    obj.valid.clear();
    for (const auto& [f, m] : obj.masks) {
      const double local = coverage(prompts.at(f), m);
      obj.local_coverage[f] = local;
      obj.valid[f] = local > cfg.coverage_valid;
    }
    obj.stability_ratio = stability_ratio(obj, prompts, residuals, cfg).ratio;
  }
}

std::vector<TrackedObject> filter_objects(const std::vector<TrackedObject>& objects, const TmrConfig& cfg) {
  std::vector<TrackedObject> kept;
  for (const auto& obj : objects) {
    if (obj.stability_ratio >= cfg.sr_threshold) kept.push_back(obj);
  }
  return kept;
}

std::vector<BinaryMask> final_masks(const std::vector<TrackedObject>& kept, std::size_t frame_count,
                                    int width, int height) {
  std::vector<BinaryMask> out(frame_count, BinaryMask(width, height));
  for (const auto& obj : kept) {
    for (const auto& [f, m] : obj.masks) {
      if (f < frame_count) out[f] |= m;
    }
  }
  return out;
}

RefineResult refine_masks(const std::vector<BinaryMask>& transient_masks,
                          const std::vector<Image>& residuals, const PromptableSegmenter& segmenter,
                          const TmrConfig& cfg) {
  cfg.validate();
  if (transient_masks.size() != residuals.size()) {
    throw std::invalid_argument("one residual image per transient mask required");
  }
  RefineResult out;
  if (transient_masks.empty()) return out;
  std::vector<std::vector<BinaryMask>> detections(transient_masks.size());
  for (std::size_t f = 0; f < transient_masks.size(); ++f) {
    for (auto& r : spatial_refine(transient_masks[f], f, segmenter, cfg)) {
      detections[f].push_back(std::move(r.mask));
    }
  }
  out.objects = propagate(detections, segmenter, cfg);
  score_objects(out.objects, transient_masks, residuals, cfg);
  const auto kept = filter_objects(out.objects, cfg);
  for (const auto& obj : kept) out.kept_labels.push_back(obj.label);
  out.masks = final_masks(kept, transient_masks.size(), transient_masks[0].width(),
                          transient_masks[0].height());
  return out;
}

void write_mask_tree(const std::filesystem::path& dir, const std::vector<TrackedObject>& objects) {
  std::filesystem::create_directories(dir / "masks");
  std::ofstream manifest(dir / "objects.txt");
  if (!manifest) throw std::runtime_error("cannot write " + (dir / "objects.txt").string());
  manifest.precision(17);
  for (const auto& obj : objects) {
    for (const auto& [f, m] : obj.masks) {
      write_mask_png(dir / "masks" / std::to_string(obj.label) / (std::to_string(f) + ".png"), m);
    }
    if (obj.masks.empty()) continue;
    manifest << obj.label << ' ' << obj.stability_ratio << ' ' << obj.first_frame() << ' '
             << obj.last_frame() << ' ' << obj.max_mask_size << '\n';
  }
}

std::vector<TrackedObject> read_mask_tree(const std::filesystem::path& dir) {
  const auto root = dir / "masks";
  if (!std::filesystem::is_directory(root)) {
    throw std::runtime_error("no mask tree under " + dir.string());
  }
  std::vector<TrackedObject> objects;
  for (const auto& entry : std::filesystem::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    TrackedObject obj;
    obj.label = static_cast<std::uint32_t>(std::stoul(entry.path().filename().string()));
    for (const auto& file : std::filesystem::directory_iterator(entry.path())) {
      if (file.path().extension() != ".png") continue;
      const auto frame = static_cast<std::size_t>(std::stoul(file.path().stem().string()));
      obj.masks.emplace(frame, read_mask_png(file.path()));
    }
    obj.refresh_max_size();
    objects.push_back(std::move(obj));
  }
  std::sort(objects.begin(), objects.end(),
            [](const TrackedObject& a, const TrackedObject& b) { return a.label < b.label; });
  return objects;
}

void write_prompts_file(const std::filesystem::path& path, const std::vector<PromptRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : records) {
    out << r.frame << ' ' << r.id;
    for (const Pixel& p : r.points) out << ' ' << p.x << ',' << p.y;
    out << '\n';
  }
}

std::vector<PromptRecord> read_prompts_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open prompts file " + path.string());
  std::vector<PromptRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    PromptRecord r;
    if (!(ss >> r.frame >> r.id)) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected frame and id");
    }
    std::string token;
    while (ss >> token) {
      Pixel p;
      char comma = 0;
      std::istringstream ts(token);
      if (!(ts >> p.x >> comma >> p.y) || comma != ',') {
        throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": bad point '" + token + "'");
      }
      r.points.push_back(p);
    }
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace cleansplat
