// pointbrush: command-line front end for labeling RGB point-cloud sequences.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pointbrush/frameset_io.hpp"
#include "pointbrush/propagation.hpp"
#include "pointbrush/service.hpp"
#include "pointbrush/session.hpp"
#include "pointbrush/synthetic.hpp"

namespace pb = pointbrush;

namespace {

int cmd_info(const std::string& dir) {
  pb::Session s = pb::Session::open(dir);
  const auto& seq = *s.sequence();
  std::cout << "directory: " << seq.directory.string() << "\n"
            << "frames:    " << seq.size() << "\n"
            << "fps:       " << seq.nominal_fps << "\n";
  for (std::size_t i = 0; i < seq.size(); ++i) {
    std::cout << "  " << seq.frames[i].name << "  t=" << seq.frames[i].timestamp_us << "us  points="
              << seq.frames[i].point_count;
    if (s.has_mask(i)) {
      const pb::LabelMask m = s.mask(i);
      std::map<pb::LabelId, std::size_t> counts;
      for (const auto l : m.labels) {
        if (l != 0) ++counts[l];
      }
      std::cout << "  labels={";
      bool first = true;
      for (const auto& [l, n] : counts) {
        std::cout << (first ? "" : ", ") << l << ":" << n;
        first = false;
      }
      std::cout << "}";
    }
    std::cout << "\n";
  }
  return 0;
}

int cmd_gen(const std::string& spec_path, const std::string& dir, std::size_t frames, std::uint64_t seed) {
  const pb::Bytes raw = pb::read_file(spec_path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(raw.begin(), raw.end());
  } catch (const nlohmann::json::exception& e) {
    throw pb::Error(spec_path + ": " + e.what());
  }
  const pb::SceneSpec spec = pb::parse_scene_spec(j);
  const pb::GeneratedSequence gen = pb::generate_synthetic_sequence(spec, frames, seed);
  const pb::FrameSequence seq = pb::write_sequence(dir, gen.clouds, gen.timestamps, gen.fps);

  // Ground truth for evaluation lives under truth/; frame 0 also gets its
  // truth labels as the starting mask so `propagate` can run right away.
  const pb::fs::path truth = pb::fs::path(dir) / "truth";
  pb::fs::create_directories(truth);
  nlohmann::ordered_json motions = nlohmann::ordered_json::array();
  for (std::size_t f = 0; f < gen.clouds.size(); ++f) {
    pb::fs::path mp = truth / seq.frames[f].name;
    mp.replace_extension(".lbl");
    pb::write_file(mp, pb::write_mask(gen.truth_masks[f]));
    nlohmann::ordered_json jf = nlohmann::ordered_json::object();
    for (const auto& [label, t] : gen.truth_motions[f]) {
      const auto& r = t.rotation();
      jf[std::to_string(label)] = {
          {"rotation", {r(0, 0), r(0, 1), r(0, 2), r(1, 0), r(1, 1), r(1, 2), r(2, 0), r(2, 1), r(2, 2)}},
          {"translation", {t.translation().x(), t.translation().y(), t.translation().z()}}};
    }
    motions.push_back(std::move(jf));
  }
  pb::write_text_file(truth / "motions.json", motions.dump(2) + "\n");
  pb::write_file(seq.mask_path(0), pb::write_mask(gen.truth_masks[0]));

  std::cout << "wrote " << seq.size() << " frames to " << dir << "\n";
  return 0;
}

int cmd_propagate(const std::string& dir, std::size_t from, std::size_t to, const std::string& mode,
                  const std::string& report_path, const std::map<std::string, double>& overrides) {
  pb::Session s = pb::Session::open(dir);
  nlohmann::json patch = nlohmann::json::object();
  patch["mode"] = mode;
  for (const auto& [key, value] : overrides) {
    if (key == "max_iterations" || key == "k_neighbors") patch[key] = static_cast<std::uint32_t>(value);
    else patch[key] = value;
  }
  const pb::PropagationParams params = pb::merge_params(s.params(), patch);
  const auto reports = s.run_propagation(from, to, params);
  s.save();

  for (const auto& r : reports) {
    std::cout << "frame " << r.from_frame << " -> " << r.to_frame << "\n";
    for (const auto& l : r.labels) {
      std::cout << "  label " << l.label << ": ";
      if (l.failed) {
        std::cout << "FAILED (" << l.reason << ")\n";
      } else {
        std::cout << "rmse=" << l.icp_rmse << " iterations=" << l.iterations
                  << (l.converged ? " converged" : " not-converged") << " transferred=" << l.transferred
                  << " lost=" << l.lost << "\n";
      }
    }
  }
  if (!report_path.empty()) pb::write_text_file(report_path, pb::to_json(reports).dump(2) + "\n");
  return 0;
}

int cmd_export(const std::string& dir, const std::string& format, const std::string& output) {
  if (format != "json") throw pb::Error("unsupported export format '" + format + "'");
  pb::Session s = pb::Session::open(dir);
  const auto& seq = *s.sequence();
  nlohmann::ordered_json j;
  j["fps"] = seq.nominal_fps;
  j["palette"] = pb::to_json(s.palette());
  nlohmann::ordered_json frames = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < seq.size(); ++i) {
    nlohmann::ordered_json jf;
    jf["name"] = seq.frames[i].name;
    jf["timestamp_us"] = seq.frames[i].timestamp_us;
    jf["point_count"] = seq.frames[i].point_count;
    jf["labels"] = s.mask(i).labels;
    frames.push_back(std::move(jf));
  }
  j["frames"] = std::move(frames);
  const std::string text = j.dump() + "\n";
  if (output.empty() || output == "-") {
    std::cout << text;
  } else {
    pb::write_text_file(output, text);
  }
  return 0;
}

int cmd_serve(const std::string& dir, std::optional<int> port, const std::string& host) {
  if (!port) {
    if (const char* env = std::getenv("POINTBRUSH_PORT")) {
      try {
        port = std::stoi(env);
      } catch (const std::exception&) {
        throw pb::Error(std::string("invalid POINTBRUSH_PORT '") + env + "'");
      }
    } else {
      port = 8080;
    }
  }
  pb::SessionService service(pb::Session::open(dir));
  httplib::Server server;
  service.mount(server);
  std::cout << "serving " << dir << " on http://" << host << ":" << *port << std::endl;
  if (!server.listen(host, *port)) throw pb::Error("cannot listen on " + host + ":" + std::to_string(*port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pointbrush - label RGB point-cloud sequences and propagate labels between frames"};
  app.require_subcommand(1);

  std::string dir;

  auto* info = app.add_subcommand("info", "Summarize a sequence directory");
  info->add_option("dir", dir, "Sequence directory")->required();

  std::string spec_path;
  std::size_t frames = 10;
  std::uint64_t seed = 0;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic sequence from a scene description");
  gen->add_option("spec", spec_path, "Scene description (JSON)")->required();
  gen->add_option("dir", dir, "Output directory")->required();
  gen->add_option("--frames", frames, "Number of frames")->check(CLI::PositiveNumber);
  gen->add_option("--seed", seed, "Random seed");

  std::size_t from = 0;
  std::size_t to = 0;
  std::string mode = "spatial";
  std::string report;
  std::map<std::string, double> overrides;
  auto* prop = app.add_subcommand("propagate", "Propagate labels from one frame to a range of frames");
  prop->add_option("dir", dir, "Sequence directory")->required();
  prop->add_option("--from", from, "Frame holding the labels")->required();
  prop->add_option("--to", to, "Last frame to label")->required();
  prop->add_option("--mode", mode, "Correspondence mode")->check(CLI::IsMember({"spatial", "color"}));
  prop->add_option("--report", report, "Write the propagation report as JSON");
  for (const char* key : {"max_iterations", "rel_tolerance", "abs_tolerance", "max_correspondence_distance",
                          "k_neighbors", "assign_radius"}) {
    std::string flag = std::string("--") + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    prop->add_option_function<double>(flag, [&overrides, key](double v) { overrides[key] = v; },
                                      std::string("Override ") + key);
  }

  std::optional<int> port;
  std::string host = "127.0.0.1";
  auto* serve = app.add_subcommand("serve", "Serve a session over HTTP");
  serve->add_option("dir", dir, "Sequence directory")->required();
  serve->add_option("--port", port, "Port (default: $POINTBRUSH_PORT, else 8080)");
  serve->add_option("--host", host, "Bind address");

  std::string format = "json";
  std::string output;
  auto* exp = app.add_subcommand("export", "Export all masks for downstream use");
  exp->add_option("dir", dir, "Sequence directory")->required();
  exp->add_option("--format", format, "Export format")->check(CLI::IsMember({"json"}));
  exp->add_option("-o,--output", output, "Output file (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*info) return cmd_info(dir);
    if (*gen) return cmd_gen(spec_path, dir, frames, seed);
    if (*prop) return cmd_propagate(dir, from, to, mode, report, overrides);
    if (*serve) return cmd_serve(dir, port, host);
    if (*exp) return cmd_export(dir, format, output);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
