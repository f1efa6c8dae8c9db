// Command-line entry points: serve, replay, simulate.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "teleop/config.hpp"
#include "teleop/server.hpp"
#include "teleop/session.hpp"
#include "teleop/synthetic.hpp"

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw teleop::Error(teleop::ErrorCode::InvalidConfig, "cannot write " + path);
  out << text;
  if (!out) throw teleop::Error(teleop::ErrorCode::InvalidConfig, "write failed for " + path);
}

std::string default_csv_path(const std::string& report_path) {
  std::filesystem::path p(report_path);
  p.replace_extension(".csv");
  return p.string();
}

int run_replay(const std::string& session_path, const std::string& out_path, std::string csv_path, bool quiet) {
  spdlog::info("replaying {}", session_path);
  const auto rec = teleop::session::load_session(session_path);
  spdlog::debug("{} frames, {} truth samples", rec.frames.size(), rec.truth.size());
  const auto result = teleop::session::replay(rec);
  write_text(out_path, teleop::session::report_text(result));
  if (csv_path.empty()) csv_path = default_csv_path(out_path);
  write_text(csv_path, teleop::session::series_csv(result));
  spdlog::info("wrote {} and {}", out_path, csv_path);
  if (!quiet) std::cout << teleop::session::summary_text(result);
  return 0;
}

int run_simulate(const std::string& spec_path, const std::string& out_path) {
  const auto text = teleop::config::read_file(spec_path);
  const auto spec = teleop::synthetic::spec_from_json(
      teleop::config::parse_json(text, spec_path, teleop::ErrorCode::InfeasibleSpec));
  const auto rec = teleop::synthetic::generate_synthetic(spec);
  teleop::session::save_session(rec, out_path);
  spdlog::info("wrote {} frames to {}", rec.frames.size(), out_path);
  return 0;
}

int run_serve(const std::string& address, unsigned short port, const std::string& config_path) {
  teleop::PipelineConfig cfg;
  if (!config_path.empty()) cfg = teleop::config::load_config_file(config_path);
  teleop::gateway::ServerOptions opts;
  opts.address = address;
  opts.port = port;
  teleop::gateway::Server server(cfg, opts);
  server.start();
  spdlog::info("listening on ws://{}:{}", address, server.port());
  boost::asio::signal_set signals(server.context(), SIGINT, SIGTERM);
  signals.async_wait([&](const boost::system::error_code& ec, int) {
    if (ec) return;
    spdlog::info("shutting down");
    server.stop();
  });
  server.run();
  const auto& s = server.stats();
  spdlog::info("served {} frames, {} broadcasts, {} dropped", s.frames.load(), s.broadcasts.load(), s.dropped.load());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vision-based teleoperation engine"};
  app.require_subcommand(1);
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error, off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "critical", "off"}));

  auto* serve = app.add_subcommand("serve", "Run the WebSocket gateway");
  std::string address = "127.0.0.1";
  unsigned short port = 8765;
  std::string config_path;
  serve->add_option("--port", port, "TCP port")->capture_default_str();
  serve->add_option("--address", address, "Listen address")->capture_default_str();
  serve->add_option("--config", config_path, "Pipeline config JSON");

  auto* replay = app.add_subcommand("replay", "Replay a session file and write a precision report");
  std::string session_path, report_path, csv_path;
  bool quiet = false;
  replay->add_option("--session", session_path, "Session JSONL file")->required();
  replay->add_option("--out", report_path, "Report JSON output")->required();
  replay->add_option("--csv", csv_path, "Series CSV output (default: report path with .csv)");
  replay->add_flag("--quiet", quiet, "Do not print the summary");

  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic session from a spec");
  std::string spec_path, out_path;
  simulate->add_option("--spec", spec_path, "Synthetic spec JSON")->required();
  simulate->add_option("--out", out_path, "Session JSONL output")->required();

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));
  spdlog::set_pattern("[%l] %v");

  try {
    if (*serve) return run_serve(address, port, config_path);
    if (*replay) return run_replay(session_path, report_path, csv_path, quiet);
    if (*simulate) return run_simulate(spec_path, out_path);
  } catch (const teleop::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
