#include "panodapt/datamodel.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "panodapt/common.hpp"
#include "panodapt/image.hpp"

namespace fs = std::filesystem;

namespace panodapt::data {

std::string domain_dir_name(DomainKind kind, int index) {
  switch (kind) {
    case DomainKind::PinholeSource: return "pin_src_" + std::to_string(index);
    case DomainKind::PanoramicSource: return "pan_src_" + std::to_string(index);
    case DomainKind::Target: return "target";
  }
  return "";
}

void validate_image(const LabeledImage& im, int classes, const std::string& source) {
  require(im.pixels.c == 3 && im.pixels.h > 0 && im.pixels.w > 0,
          "image must be 3xHxW: " + source);
  for (float v : im.pixels.v)
    require(v >= 0.0f && v <= 1.0f, "pixel values out of [0,1]: " + source);
  if (im.labels) {
    require(im.labels->h == im.pixels.h && im.labels->w == im.pixels.w,
            "label map size differs from image: " + source);
    for (std::uint8_t l : im.labels->v)
      require(l < classes || l == kIgnoreLabel,
              "label value " + std::to_string(int(l)) + " out of range: " + source);
  }
}

int DomainSet::height() const {
  if (!pin.empty() && !pin[0].empty()) return pin[0][0].pixels.h;
  return 0;
}

int DomainSet::width() const {
  if (!pin.empty() && !pin[0].empty()) return pin[0][0].pixels.w;
  return 0;
}

void DomainSet::validate(int classes) const {
  require(!pin.empty(), "no pinhole source domain present");
  require(!pan.empty(), "no panoramic source domain present");
  require(!target.empty(), "target domain is empty");
  const int H = height(), W = width();
  require(H >= 16 && W >= 16, "images must be at least 16x16");
  require(H % 4 == 0 && W % 4 == 0, "image sides must be multiples of 4");
  auto check_all = [&](const std::vector<LabeledImage>& dom, bool need_labels,
                       const std::string& name) {
    require(!dom.empty(), "domain has no images: " + name);
    for (const auto& im : dom) {
      require(im.pixels.h == H && im.pixels.w == W,
              "image size differs across domains: " + name + "/" + im.id);
      require(!need_labels || im.labels.has_value(), "missing labels: " + name + "/" + im.id);
      validate_image(im, classes, name + "/" + im.id);
    }
  };
  for (size_t i = 0; i < pin.size(); ++i)
    check_all(pin[i], true, domain_dir_name(DomainKind::PinholeSource, int(i)));
  for (size_t i = 0; i < pan.size(); ++i)
    check_all(pan[i], true, domain_dir_name(DomainKind::PanoramicSource, int(i)));
  check_all(target, false, "target");
}

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

namespace {

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double d = std::stod(v, &pos);
    require(pos == v.size(), "trailing characters in value for '" + key + "': " + v);
    return d;
  } catch (const ValidationError&) {
    throw;
  } catch (...) {
    throw ValidationError("bad numeric value for '" + key + "': " + v);
  }
}

long parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    long d = std::stol(v, &pos);
    require(pos == v.size(), "trailing characters in value for '" + key + "': " + v);
    return d;
  } catch (const ValidationError&) {
    throw;
  } catch (...) {
    throw ValidationError("bad integer value for '" + key + "': " + v);
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    unsigned long long d = std::stoull(v, &pos);
    require(pos == v.size(), "trailing characters in value for '" + key + "': " + v);
    return d;
  } catch (const ValidationError&) {
    throw;
  } catch (...) {
    throw ValidationError("bad integer value for '" + key + "': " + v);
  }
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

void apply_config_kv(TrainConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "seed") cfg.seed = parse_u64(key, value);
  else if (key == "classes") cfg.classes = int(parse_int(key, value));
  else if (key == "profile") {
    require(value == "desk" || value == "paper", "profile must be desk or paper");
    cfg.profile = value;
    apply_profile(cfg);  // presets land now; later keys may still override
  }
  else if (key == "scene") cfg.scene = value;
  else if (key == "alpha") cfg.alpha = parse_double(key, value);
  else if (key == "beta") cfg.beta = parse_double(key, value);
  else if (key == "gamma") cfg.gamma = parse_double(key, value);
  else if (key == "eta") cfg.eta = parse_double(key, value);
  else if (key == "max_its") cfg.max_its = int(parse_int(key, value));
  else if (key == "pretrain_epochs") cfg.pretrain_epochs = int(parse_int(key, value));
  else if (key == "ckpt_every") cfg.ckpt_every = int(parse_int(key, value));
  else if (key == "skip_nonfinite") cfg.skip_nonfinite = parse_int(key, value) != 0;
  else if (key == "threads") cfg.threads = int(parse_int(key, value));
  else if (key == "lr_s") cfg.lr_s = parse_double(key, value);
  else if (key == "lr_f") cfg.lr_f = parse_double(key, value);
  else if (key == "lr_d") cfg.lr_d = parse_double(key, value);
  else if (key == "momentum_s") cfg.momentum_s = parse_double(key, value);
  else if (key == "wd_s") cfg.wd_s = parse_double(key, value);
  else if (key == "wd_f") cfg.wd_f = parse_double(key, value);
  else if (key == "wd_d") cfg.wd_d = parse_double(key, value);
  else if (key == "image_h") cfg.image_h = int(parse_int(key, value));
  else if (key == "image_w") cfg.image_w = int(parse_int(key, value));
  else if (key == "enc_widths") {
    std::stringstream ss(value);
    std::string tok;
    int i = 0;
    while (std::getline(ss, tok, ',')) {
      require(i < 4, "enc_widths takes exactly 4 comma-separated values");
      cfg.enc_widths[i++] = int(parse_int(key, trim(tok)));
    }
    require(i == 4, "enc_widths takes exactly 4 comma-separated values");
  } else if (key == "branch_width") cfg.branch_width = int(parse_int(key, value));
  else if (key == "gate_hidden") cfg.gate_hidden = int(parse_int(key, value));
  else if (key == "deform_base") cfg.deform_base = int(parse_int(key, value));
  else if (key == "disc_base") cfg.disc_base = int(parse_int(key, value));
  else if (key == "v_max") cfg.v_max = parse_double(key, value);
  else if (key == "integrate_steps") cfg.integrate_steps = int(parse_int(key, value));
  else if (key == "p_flip") cfg.p_flip = parse_double(key, value);
  else if (key == "p_jitter") cfg.p_jitter = parse_double(key, value);
  else if (key == "jitter") cfg.jitter = parse_double(key, value);
  else if (key == "p_blur") cfg.p_blur = parse_double(key, value);
  else if (key == "p_erase") cfg.p_erase = parse_double(key, value);
  else if (key == "p_lab") cfg.p_lab = parse_double(key, value);
  else if (key == "gen_pin_domains") cfg.gen_pin_domains = int(parse_int(key, value));
  else if (key == "gen_pan_domains") cfg.gen_pan_domains = int(parse_int(key, value));
  else if (key == "gen_count") cfg.gen_count = int(parse_int(key, value));
  else if (key == "distortion") cfg.distortion = parse_double(key, value);
  else if (key == "noise") cfg.noise = parse_double(key, value);
  else if (key == "target_shift") cfg.target_shift = parse_double(key, value);
  else throw ValidationError("unknown config key: " + key);
}

TrainConfig parse_config_file(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open config file: " + path.string());
  TrainConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = line;
    size_t hash = s.find('#');
    if (hash != std::string::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    size_t eq = s.find('=');
    require(eq != std::string::npos,
            "config line " + std::to_string(lineno) + " is not 'key = value': " + line);
    std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    require(!key.empty() && !value.empty(),
            "config line " + std::to_string(lineno) + " is not 'key = value': " + line);
    apply_config_kv(cfg, key, value);
  }
  return cfg;
}

void apply_profile(TrainConfig& cfg) {
  if (cfg.profile == "paper") {
    cfg.lr_f = 2.5e-6;
    cfg.lr_d = 2.5e-6;
    cfg.lr_s = 5e-6;
    cfg.wd_f = 5e-5;
    cfg.wd_d = 5e-5;
    cfg.wd_s = 5e-4;
  }
}

void validate_config(const TrainConfig& cfg) {
  require(cfg.classes >= 2 && cfg.classes <= 64, "classes must be in [2,64]");
  require(cfg.profile == "desk" || cfg.profile == "paper", "profile must be desk or paper");
  require(cfg.scene == "outdoor" || cfg.scene == "indoor", "scene must be outdoor or indoor");
  require(cfg.alpha >= 0, "alpha must be non-negative");
  require(cfg.beta < 0 || cfg.beta <= 100, "beta out of range");
  require(cfg.gamma >= 0 && cfg.gamma <= 1, "gamma must lie in [0,1]");
  require(cfg.eta >= 0 && cfg.eta <= 1, "eta must lie in [0,1]");
  require(cfg.max_its >= 1, "max_its must be positive");
  require(cfg.pretrain_epochs >= 0, "pretrain_epochs must be non-negative");
  require(cfg.threads >= 1 && cfg.threads <= 256, "threads out of range");
  require(cfg.lr_s > 0 && cfg.lr_f > 0 && cfg.lr_d > 0, "learning rates must be positive");
  require(cfg.image_h >= 16 && cfg.image_w >= 16, "image sides must be at least 16");
  require(cfg.image_h % 4 == 0 && cfg.image_w % 4 == 0, "image sides must be multiples of 4");
  for (int w : cfg.enc_widths) require(w >= 2 && w <= 1024, "enc_widths out of range");
  require(cfg.branch_width >= 2 && cfg.gate_hidden >= 2, "head widths out of range");
  require(cfg.deform_base >= 2 && cfg.disc_base >= 2, "net base widths out of range");
  require(cfg.v_max > 0 && cfg.v_max <= 64, "v_max out of range");
  require(cfg.integrate_steps >= 1 && cfg.integrate_steps <= 16, "integrate_steps out of range");
  for (double p : {cfg.p_flip, cfg.p_jitter, cfg.p_blur, cfg.p_erase, cfg.p_lab})
    require(p >= 0 && p <= 1, "augmentation probabilities must lie in [0,1]");
  require(cfg.jitter >= 0 && cfg.jitter <= 1, "jitter strength must lie in [0,1]");
  require(cfg.gen_pin_domains >= 1 && cfg.gen_pan_domains >= 1, "need at least one source domain");
  require(cfg.gen_count >= 1, "gen_count must be positive");
  require(cfg.distortion >= 0 && cfg.distortion < 0.95, "distortion must lie in [0,0.95)");
  require(cfg.noise >= 0 && cfg.noise <= 0.5, "noise out of range");
  require(cfg.target_shift >= 0 && cfg.target_shift <= 1, "target_shift must lie in [0,1]");
}

std::vector<std::pair<std::string, std::string>> TrainConfig::describe() const {
  auto f = [](double v) {
    std::ostringstream o;
    o.precision(10);
    o << v;
    return o.str();
  };
  std::vector<std::pair<std::string, std::string>> kv;
  kv.push_back({"seed", std::to_string(seed)});
  kv.push_back({"classes", std::to_string(classes)});
  kv.push_back({"profile", profile});
  kv.push_back({"scene", scene});
  kv.push_back({"alpha", f(alpha)});
  kv.push_back({"beta", f(beta_resolved())});
  kv.push_back({"gamma", f(gamma)});
  kv.push_back({"eta", f(eta)});
  kv.push_back({"max_its", std::to_string(max_its)});
  kv.push_back({"pretrain_epochs", std::to_string(pretrain_epochs)});
  kv.push_back({"ckpt_every", std::to_string(ckpt_every_resolved())});
  kv.push_back({"lr_s", f(lr_s)});
  kv.push_back({"lr_f", f(lr_f)});
  kv.push_back({"lr_d", f(lr_d)});
  kv.push_back({"momentum_s", f(momentum_s)});
  kv.push_back({"wd_s", f(wd_s)});
  kv.push_back({"wd_f", f(wd_f)});
  kv.push_back({"wd_d", f(wd_d)});
  kv.push_back({"image_h", std::to_string(image_h)});
  kv.push_back({"image_w", std::to_string(image_w)});
  kv.push_back({"enc_widths", std::to_string(enc_widths[0]) + "," + std::to_string(enc_widths[1]) +
                                  "," + std::to_string(enc_widths[2]) + "," +
                                  std::to_string(enc_widths[3])});
  kv.push_back({"branch_width", std::to_string(branch_width)});
  kv.push_back({"gate_hidden", std::to_string(gate_hidden)});
  kv.push_back({"deform_base", std::to_string(deform_base)});
  kv.push_back({"disc_base", std::to_string(disc_base)});
  kv.push_back({"v_max", f(v_max)});
  kv.push_back({"integrate_steps", std::to_string(integrate_steps)});
  kv.push_back({"p_flip", f(p_flip)});
  kv.push_back({"p_jitter", f(p_jitter)});
  kv.push_back({"jitter", f(jitter)});
  kv.push_back({"p_blur", f(p_blur)});
  kv.push_back({"p_erase", f(p_erase)});
  kv.push_back({"p_lab", f(p_lab)});
  kv.push_back({"distortion", f(distortion)});
  kv.push_back({"noise", f(noise)});
  kv.push_back({"target_shift", f(target_shift)});
  return kv;
}

// ---------------------------------------------------------------------------
// dataset I/O
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> list_png_ids(const fs::path& dir) {
  std::vector<std::string> ids;
  if (!fs::is_directory(dir)) return ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    if (e.path().extension() == ".png") ids.push_back(e.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<LabeledImage> load_domain(const fs::path& dom_dir, DomainKind kind, int index,
                                      bool with_labels, int classes) {
  std::vector<LabeledImage> out;
  fs::path img_dir = dom_dir / "images";
  require(fs::is_directory(img_dir), "missing images directory: " + img_dir.string());
  for (const std::string& id : list_png_ids(img_dir)) {
    LabeledImage im;
    im.kind = kind;
    im.domain_index = index;
    im.id = id;
    im.pixels = img::read_png_rgb(img_dir / (id + ".png"));
    if (with_labels) {
      fs::path lp = dom_dir / "labels" / (id + ".png");
      require(fs::exists(lp), "missing label map: " + lp.string());
      im.labels = img::read_png_gray(lp);
    }
    validate_image(im, classes, (img_dir / (id + ".png")).string());
    out.push_back(std::move(im));
  }
  return out;
}

}  // namespace

DomainSet load_dataset(const fs::path& root, const TrainConfig& cfg) {
  require(fs::is_directory(root), "dataset root does not exist: " + root.string());
  DomainSet ds;
  for (int i = 0;; ++i) {
    fs::path d = root / domain_dir_name(DomainKind::PinholeSource, i);
    if (!fs::is_directory(d)) break;
    ds.pin.push_back(load_domain(d, DomainKind::PinholeSource, i, true, cfg.classes));
  }
  for (int i = 0;; ++i) {
    fs::path d = root / domain_dir_name(DomainKind::PanoramicSource, i);
    if (!fs::is_directory(d)) break;
    ds.pan.push_back(load_domain(d, DomainKind::PanoramicSource, i, true, cfg.classes));
  }
  fs::path t = root / "target";
  if (fs::is_directory(t))
    ds.target = load_domain(t, DomainKind::Target, 0, false, cfg.classes);
  ds.validate(cfg.classes);
  return ds;
}

void save_dataset(const DomainSet& ds, const fs::path& root) {
  auto save_domain = [&](const std::vector<LabeledImage>& dom, DomainKind kind, int index,
                         bool with_labels) {
    fs::path d = root / domain_dir_name(kind, index);
    fs::create_directories(d / "images");
    if (with_labels) fs::create_directories(d / "labels");
    for (const auto& im : dom) {
      img::write_png_rgb(im.pixels, d / "images" / (im.id + ".png"));
      if (with_labels && im.labels) img::write_png_gray(*im.labels, d / "labels" / (im.id + ".png"));
    }
  };
  for (size_t i = 0; i < ds.pin.size(); ++i)
    save_domain(ds.pin[i], DomainKind::PinholeSource, int(i), true);
  for (size_t i = 0; i < ds.pan.size(); ++i)
    save_domain(ds.pan[i], DomainKind::PanoramicSource, int(i), true);
  save_domain(ds.target, DomainKind::Target, 0, false);
}

std::vector<std::pair<std::string, LabelMap>> load_target_eval(const fs::path& root) {
  fs::path dir = root / "target_eval" / "labels";
  require(fs::is_directory(dir), "missing evaluation labels: " + dir.string());
  std::vector<std::pair<std::string, LabelMap>> out;
  for (const std::string& id : list_png_ids(dir))
    out.push_back({id, img::read_png_gray(dir / (id + ".png"))});
  require(!out.empty(), "no evaluation labels under " + dir.string());
  return out;
}

}  // namespace panodapt::data
