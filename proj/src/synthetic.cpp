#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "reid/dataset_io.hpp"
#include "reid/error.hpp"
#include "reid/image.hpp"

namespace reid {

namespace {

struct Rgb {
  double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1 - std::abs(std::fmod(hp, 2.0) - 1));
  Rgb rgb{0, 0, 0};
  switch (static_cast<int>(hp) % 6) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  const double m = v - c;
  return {rgb.r + m, rgb.g + m, rgb.b + m};
}

/// Appearance shared by every image of one vehicle.
struct VehicleSignature {
  Rgb body;
  Rgb cabin;
  Rgb stripe;
  bool has_stripe;
  double body_w, body_h;
  double cabin_w, cabin_offset;
  double wheel_r;
};

VehicleSignature make_signature(int index, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  VehicleSignature s;
  const double hue = 0.13 + index * 0.6180339887498949;
  s.body = hsv_to_rgb(hue, 0.55 + 0.4 * u(rng), 0.6 + 0.35 * u(rng));
  s.cabin = hsv_to_rgb(hue + 0.5, 0.3 + 0.5 * u(rng), 0.25 + 0.5 * u(rng));
  s.has_stripe = u(rng) < 0.5;
  s.stripe = u(rng) < 0.5 ? Rgb{0.95, 0.95, 0.95} : Rgb{0.05, 0.05, 0.05};
  s.body_w = 0.6 + 0.25 * u(rng);
  s.body_h = 0.22 + 0.14 * u(rng);
  s.cabin_w = 0.4 + 0.3 * u(rng);
  s.cabin_offset = -0.2 + 0.4 * u(rng);
  s.wheel_r = 0.07 + 0.04 * u(rng);
  return s;
}

struct View {
  double brightness;
  double background;
  bool mirrored;
  double scale;
  double shift_x, shift_y;
};

Image render(const VehicleSignature& sig, const View& view, int size, std::mt19937_64& rng) {
  std::vector<Rgb> canvas(static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y) {
    const double g = view.background * (0.85 + 0.3 * y / size);
    for (int x = 0; x < size; ++x) canvas[y * size + x] = {g, g, g * 1.05};
  }
  auto fill_rect = [&](double x0, double y0, double x1, double y1, Rgb color) {
    const int ix0 = std::max(0, static_cast<int>(std::floor(x0 * size)));
    const int iy0 = std::max(0, static_cast<int>(std::floor(y0 * size)));
    const int ix1 = std::min(size, static_cast<int>(std::ceil(x1 * size)));
    const int iy1 = std::min(size, static_cast<int>(std::ceil(y1 * size)));
    for (int y = iy0; y < iy1; ++y)
      for (int x = ix0; x < ix1; ++x) canvas[y * size + x] = color;
  };
  auto fill_disc = [&](double cx, double cy, double r, Rgb color) {
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double dx = (x + 0.5) / size - cx, dy = (y + 0.5) / size - cy;
        if (dx * dx + dy * dy <= r * r) canvas[y * size + x] = color;
      }
  };

  const double cx = 0.5 + view.shift_x;
  const double cy = 0.58 + view.shift_y;
  const double bw = sig.body_w * view.scale, bh = sig.body_h * view.scale;
  const double dir = view.mirrored ? -1.0 : 1.0;

  const double cw = sig.cabin_w * bw;
  const double ccx = cx + dir * sig.cabin_offset * bw * 0.5;
  fill_rect(ccx - cw / 2, cy - bh / 2 - 0.6 * bh, ccx + cw / 2, cy - bh / 2, sig.cabin);
  fill_rect(cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2, sig.body);
  if (sig.has_stripe) {
    fill_rect(cx - bw / 2, cy - 0.08 * bh, cx + bw / 2, cy + 0.08 * bh, sig.stripe);
  }
  const double hx = cx + dir * (bw / 2 - 0.04 * view.scale);
  fill_rect(hx - 0.025, cy - bh / 2 + 0.02, hx + 0.025, cy - bh / 2 + 0.06, {1.0, 0.9, 0.3});
  const double wr = sig.wheel_r * view.scale;
  fill_disc(cx - bw * 0.3, cy + bh / 2, wr, {0.08, 0.08, 0.08});
  fill_disc(cx + bw * 0.3, cy + bh / 2, wr, {0.08, 0.08, 0.08});

  std::normal_distribution<double> noise(0.0, 3.0);
  Image image(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const Rgb& p = canvas[y * size + x];
      const double vals[3] = {p.r, p.g, p.b};
      for (int c = 0; c < 3; ++c) {
        const double v = 255.0 * vals[c] * view.brightness + noise(rng);
        image.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return image;
}

std::string format_id(const char* fmt, int a) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), fmt, a);
  return buf;
}

}  // namespace

Manifest make_synthetic_dataset(const SyntheticOptions& options,
                                const std::filesystem::path& out_dir) {
  require(options.n_identities >= 1 && options.images_per_identity >= 1 &&
              options.n_cameras >= 1,
          "synthetic dataset counts must be >= 1");
  require(options.image_size >= 8, "synthetic image size must be >= 8");

  std::filesystem::create_directories(out_dir / "images");
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  std::vector<View> cameras;
  for (int c = 0; c < options.n_cameras; ++c) {
    const double t = options.n_cameras > 1 ? static_cast<double>(c) / (options.n_cameras - 1) : 0.5;
    cameras.push_back({0.8 + 0.35 * t, 0.3 + 0.3 * u(rng), c % 2 == 1, 1.0, 0.0, 0.0});
  }

  // Identities [0, n_train) train; the rest are split into query/gallery.
  const int n_train = options.n_identities == 1 ? 1 : (options.n_identities + 1) / 2;

  Manifest manifest;
  manifest.dataset_name = "synthetic";
  for (int v = 0; v < options.n_identities; ++v) {
    const VehicleSignature sig = make_signature(v, rng);
    const std::string vehicle = format_id("v%03d", v);
    const bool is_train = v < n_train;
    std::vector<bool> camera_has_query(options.n_cameras, false);
    int gallery_left = 0;
    if (!is_train) {
      // How many images stay in gallery if each camera gives up its first one.
      const int cams_used = std::min(options.n_cameras, options.images_per_identity);
      gallery_left = options.images_per_identity - cams_used;
    }
    for (int j = 0; j < options.images_per_identity; ++j) {
      const int cam = j % options.n_cameras;
      View view = cameras[cam];
      view.brightness *= 0.95 + 0.1 * u(rng);
      view.scale = 0.9 + 0.2 * u(rng);
      view.shift_x = (u(rng) - 0.5) * 0.1;
      view.shift_y = (u(rng) - 0.5) * 0.08;

      ImageRecord r;
      r.image_id = vehicle + "_c" + std::to_string(cam) + format_id("_%02d", j);
      r.vehicle_id = vehicle;
      r.camera_id = "c" + std::to_string(cam);
      r.path = out_dir / "images" / (r.image_id + ".png");
      if (is_train) {
        r.split = Split::kTrain;
      } else if (!camera_has_query[cam] && gallery_left > 0) {
        camera_has_query[cam] = true;
        r.split = Split::kQuery;
      } else {
        r.split = Split::kGallery;
      }
      write_png(render(sig, view, options.image_size, rng), r.path);
      manifest.records.push_back(std::move(r));
    }
  }
  manifest.validate();
  save_manifest(manifest, out_dir / "manifest.csv");
  return manifest;
}

}  // namespace reid
