#include <png.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

#include "dfdg/checkpoint.hpp"
#include "dfdg/experiment_runner.hpp"

namespace dfdg {
namespace fs = std::filesystem;
namespace {

constexpr std::uint64_t kGridNoiseStream = 0x9e1d;
constexpr int kGridColumns = 8;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b"};

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

void write_curves(const fs::path& file, const std::string& title, const std::vector<const RunRecord*>& runs) {
  constexpr double W = 640, H = 400, L = 60, R = 130, T = 40, B = 50;
  int max_iter = 1;
  for (const auto* r : runs) {
    for (const auto& p : r->evals) max_iter = std::max(max_iter, p.iteration);
  }
  auto x = [&](double it) { return L + (W - L - R) * it / max_iter; };
  auto y = [&](double acc) { return H - B - (H - T - B) * acc; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << xml_escape(title)
      << "</text>\n";
  svg << "<line x1=\"" << L << "\" y1=\"" << y(0) << "\" x2=\"" << W - R << "\" y2=\"" << y(0)
      << "\" stroke=\"black\"/>\n<line x1=\"" << L << "\" y1=\"" << y(0) << "\" x2=\"" << L << "\" y2=\"" << y(1)
      << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 5; ++k) {
    const double a = k / 5.0;
    svg << "<text x=\"" << L - 8 << "\" y=\"" << y(a) + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
        << static_cast<int>(a * 100) << "</text>\n";
  }
  svg << "<text x=\"" << L - 8 << "\" y=\"" << H - B + 18 << "\" text-anchor=\"end\" font-size=\"11\">0</text>\n"
      << "<text x=\"" << W - R << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\" font-size=\"11\">"
      << max_iter << "</text>\n"
      << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
      << "\" text-anchor=\"middle\" font-size=\"12\">server iteration</text>\n"
      << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" font-size=\"12\" transform=\"rotate(-90 16 "
      << (T + H - B) / 2 << ")\" text-anchor=\"middle\">test accuracy (%)</text>\n";
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const char* color = kPalette[i % std::size(kPalette)];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& p : runs[i]->evals) svg << x(p.iteration) << ',' << y(p.accuracy) << ' ';
    svg << "\"/>\n<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * (i + 1) << "\" font-size=\"12\" fill=\""
        << color << "\">seed " << runs[i]->seed << "</text>\n";
  }
  svg << "</svg>\n";
  std::ofstream out(file);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + file.string());
  out << svg.str();
}

void write_png(const fs::path& file, int width, int height, int channels, const std::vector<unsigned char>& pixels,
               const std::string& title) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(file.string().c_str(), "wb"), std::fclose);
  require(fp != nullptr, ErrorCode::Io, "cannot write " + file.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::Io, "libpng failed writing " + file.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, 8, channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_text text{};
  std::string key = "Title";
  text.compression = PNG_TEXT_COMPRESSION_NONE;
  text.key = key.data();
  std::string value = title;
  text.text = value.data();
  png_set_text(png, info, &text, 1);
  png_write_info(png, info);
  for (int r = 0; r < height; ++r) {
    png_write_row(png, pixels.data() + static_cast<std::size_t>(r) * width * channels);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// One row per class with p(y) > 0, kGridColumns samples per row.
void write_grid(const fs::path& file, const std::string& title, const GeneratorState<float>& gen,
                const std::vector<double>& label_probs, std::uint64_t seed) {
  std::vector<int> classes;
  for (int y = 0; y < gen.spec.num_classes; ++y) {
    if (label_probs.empty() || label_probs[y] > 0.0) classes.push_back(y);
  }
  const int rows = static_cast<int>(classes.size());
  const int n = rows * kGridColumns;
  Rng rng(Rng::derive(seed, kGridNoiseStream));
  Tensor<float> z({n, gen.spec.noise_dim});
  for (auto& v : z.data) v = static_cast<float>(rng.normal());
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) labels[i] = classes[i / kGridColumns];
  const Tensor<float> s = generate(gen, z, labels);

  const ImageShape img = gen.spec.image;
  const int scale = img.height <= 16 ? 4 : 2;
  const int gap = 2;
  const int tile_h = img.height * scale, tile_w = img.width * scale;
  const int width = kGridColumns * (tile_w + gap) + gap;
  const int height = rows * (tile_h + gap) + gap;
  const int ch = img.channels == 1 ? 1 : 3;
  std::vector<unsigned char> pixels(static_cast<std::size_t>(width) * height * ch, 255);
  for (int i = 0; i < n; ++i) {
    const int oy = gap + (i / kGridColumns) * (tile_h + gap);
    const int ox = gap + (i % kGridColumns) * (tile_w + gap);
    const float* src = s.row(i);
    for (int yy = 0; yy < tile_h; ++yy) {
      for (int xx = 0; xx < tile_w; ++xx) {
        for (int c = 0; c < ch; ++c) {
          const float v = src[(c * img.height + yy / scale) * img.width + xx / scale];
          const auto byte = static_cast<unsigned char>(std::clamp((v + 1.0f) * 127.5f, 0.0f, 255.0f));
          pixels[(static_cast<std::size_t>(oy + yy) * width + ox + xx) * ch + c] = byte;
        }
      }
    }
  }
  write_png(file, width, height, ch, pixels, title);
}

}  // namespace

std::vector<std::string> emit_plots(const std::vector<RunRecord>& records, const fs::path& out_dir) {
  std::vector<std::string> warnings;
  fs::create_directories(out_dir);
  std::map<std::string, std::vector<const RunRecord*>> by_label;
  std::vector<std::string> order;
  for (const auto& r : records) {
    const std::string where = r.label + " seed " + std::to_string(r.seed);
    if (r.evals.empty()) {
      warnings.push_back("skipping " + where + ": empty accuracy series");
      continue;
    }
    if (!by_label.count(r.label)) order.push_back(r.label);
    by_label[r.label].push_back(&r);
  }
  for (const auto& label : order) {
    write_curves(out_dir / ("curves_" + label + ".svg"), label, by_label[label]);
  }
  for (const auto& r : records) {
    for (std::size_t k = 0; k < r.generator_checkpoints.size(); ++k) {
      const fs::path ckpt = r.dir / r.generator_checkpoints[k];
      if (!fs::exists(ckpt)) {
        warnings.push_back("skipping grid: missing " + ckpt.string());
        continue;
      }
      const std::string title = "G" + std::to_string(k + 1);
      const auto gen = bind_generator(load_checkpoint(ckpt));
      const fs::path dir = out_dir / r.label;
      fs::create_directories(dir);
      write_grid(dir / ("seed_" + std::to_string(r.seed) + "_" + title + ".png"), title, gen, r.label_probs,
                 r.seed);
    }
  }
  return warnings;
}

}  // namespace dfdg
