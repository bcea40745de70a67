#pragma once

#include <charconv>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "autopainter/color_hints.hpp"
#include "autopainter/errors.hpp"
#include "autopainter/painter.hpp"
#include "autopainter/png_io.hpp"

namespace autopainter {

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  unsigned workers = 4;
};

/// Parsed form of a POST /paint body.
struct PaintRequest {
  RasterImage sketch;
  std::vector<Scribble> scribbles;
  std::optional<std::uint64_t> seed;
};

inline PaintRequest parse_paint_request(const httplib::Request& req) {
  if (!req.is_multipart_form_data()) throw RequestError("expected multipart/form-data");
  if (!req.has_file("sketch")) throw RequestError("missing 'sketch' part");
  PaintRequest out;
  const std::string& png = req.get_file_value("sketch").content;
  try {
    out.sketch = decode_png(std::span(reinterpret_cast<const unsigned char*>(png.data()), png.size()));
  } catch (const LoadError& e) {
    throw RequestError(std::string("sketch is not a decodable PNG: ") + e.what());
  }
  if (req.has_file("scribbles")) {
    const std::string& text = req.get_file_value("scribbles").content;
    if (!text.empty()) {
      nlohmann::json doc;
      try {
        doc = nlohmann::json::parse(text);
      } catch (const nlohmann::json::exception& e) {
        throw RequestError(std::string("scribbles: invalid JSON: ") + e.what());
      }
      out.scribbles = parse_scribbles(doc);
    }
  }
  if (req.has_file("seed")) {
    const std::string& text = req.get_file_value("seed").content;
    std::uint64_t seed = 0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), seed);
    if (text.empty() || ec != std::errc() || end != text.data() + text.size())
      throw RequestError("seed must be a non-negative integer");
    out.seed = seed;
  }
  return out;
}

/// Serves /paint, /health and /model over one shared, read-only Painter.
class PaintService {
 public:
  PaintService(std::shared_ptr<const Painter> painter, ServiceOptions options)
      : painter_(std::move(painter)), options_(std::move(options)) {
    const unsigned workers = std::max(1u, options_.workers);
    server_.new_task_queue = [workers] { return new httplib::ThreadPool(workers); };
    server_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string msg = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        msg = e.what();
      } catch (...) {
      }
      reply_error(res, 500, msg);
    });

    server_.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
      res.set_content(painter_->health().dump(), "application/json");
    });
    server_.Get("/model", [this](const httplib::Request&, httplib::Response& res) {
      res.set_content(painter_->model_summary().dump(), "application/json");
    });
    server_.Post("/paint", [this](const httplib::Request& req, httplib::Response& res) { handle_paint(req, res); });
  }

  /// Binds the listening socket; returns the bound port.
  int bind() {
    port_ = options_.port == 0 ? server_.bind_to_any_port(options_.host)
                               : (server_.bind_to_port(options_.host, options_.port) ? options_.port : -1);
    if (port_ < 0) throw LoadError("cannot bind " + options_.host + ":" + std::to_string(options_.port));
    return port_;
  }

  /// Blocks serving requests until stop().
  void run() { server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() const { server_.wait_until_ready(); }
  int port() const { return port_; }

 private:
  static void reply_error(httplib::Response& res, int status, const std::string& message) {
    res.status = status;
    res.set_content(nlohmann::json{{"error", message}}.dump(), "application/json");
  }

  void handle_paint(const httplib::Request& req, httplib::Response& res) const {
    PaintRequest parsed;
    try {
      parsed = parse_paint_request(req);
    } catch (const RequestError& e) {
      return reply_error(res, 400, e.what());
    } catch (const ParameterError& e) {
      return reply_error(res, 400, e.what());
    }
    try {
      const PaintResult result = painter_->paint(parsed.sketch, parsed.scribbles, parsed.seed);
      const std::vector<unsigned char> png = encode_png(result.image);
      res.set_header("X-Crop-Box", std::to_string(result.crop.x) + "," + std::to_string(result.crop.y) + "," +
                                       std::to_string(result.crop.side));
      res.set_header("X-Model-Id", painter_->model_id());
      res.set_content(std::string(png.begin(), png.end()), "image/png");
    } catch (const ParameterError& e) {
      reply_error(res, 400, e.what());
    } catch (const std::exception& e) {
      reply_error(res, 500, e.what());
    }
  }

  std::shared_ptr<const Painter> painter_;
  ServiceOptions options_;
  httplib::Server server_;
  int port_ = -1;
};

}  // namespace autopainter
