#pragma once

// External judge: a child process speaking line-delimited JSON on its
// standard streams.
//
//   request  {"id": string, "answer": string}   one per line on the child's stdin
//   response {"id": string, "unsafe": boolean}  one per line on the child's stdout
//
// Responses may arrive in any order and are matched by id. Any other line is
// a protocol error. POSIX only.

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "safeprobe/error.hpp"
#include "safeprobe/eval.hpp"

namespace safeprobe {

class ExecJudge final : public Judge {
public:
    /// argv[0] is the program path; it is run without a shell.
    explicit ExecJudge(std::vector<std::string> argv,
                       std::chrono::milliseconds timeout = std::chrono::seconds(30),
                       std::size_t max_in_flight = 64)
        : argv_(std::move(argv)), timeout_(timeout), max_in_flight_(max_in_flight == 0 ? 1 : max_in_flight) {
        detail::require(!argv_.empty(), "judge", "empty judge command");
    }

    std::vector<bool> judge(std::span<const JudgeInput> inputs) override;

private:
    std::vector<std::string> argv_;
    std::chrono::milliseconds timeout_;
    std::size_t max_in_flight_;
};

namespace detail {

class FdGuard {
public:
    explicit FdGuard(int fd = -1) : fd_(fd) {}
    FdGuard(const FdGuard&) = delete;
    FdGuard& operator=(const FdGuard&) = delete;
    ~FdGuard() { reset(); }
    int get() const noexcept { return fd_; }
    void reset() {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }

private:
    int fd_;
};

/// Ignores SIGPIPE while alive so a dying child surfaces as EPIPE.
class SigpipeGuard {
public:
    SigpipeGuard() {
        struct sigaction ign {};
        ign.sa_handler = SIG_IGN;
        ::sigaction(SIGPIPE, &ign, &old_);
    }
    ~SigpipeGuard() { ::sigaction(SIGPIPE, &old_, nullptr); }

private:
    struct sigaction old_ {};
};

class ChildProcess {
public:
    explicit ChildProcess(const std::vector<std::string>& argv) {
        int to_child[2], from_child[2];
        if (::pipe(to_child) != 0) fail("judge", std::string("pipe: ") + std::strerror(errno));
        if (::pipe(from_child) != 0) {
            ::close(to_child[0]);
            ::close(to_child[1]);
            fail("judge", std::string("pipe: ") + std::strerror(errno));
        }
        std::vector<char*> args;
        for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
        args.push_back(nullptr);

        pid_ = ::fork();
        if (pid_ < 0) fail("judge", std::string("fork: ") + std::strerror(errno));
        if (pid_ == 0) {
            ::dup2(to_child[0], STDIN_FILENO);
            ::dup2(from_child[1], STDOUT_FILENO);
            ::close(to_child[0]);
            ::close(to_child[1]);
            ::close(from_child[0]);
            ::close(from_child[1]);
            ::execv(args[0], args.data());
            ::_exit(127);
        }
        ::close(to_child[0]);
        ::close(from_child[1]);
        stdin_ = std::make_unique<FdGuard>(to_child[1]);
        stdout_ = std::make_unique<FdGuard>(from_child[0]);
        ::fcntl(stdout_->get(), F_SETFD, FD_CLOEXEC);
        ::fcntl(stdin_->get(), F_SETFD, FD_CLOEXEC);
    }

    ChildProcess(const ChildProcess&) = delete;
    ChildProcess& operator=(const ChildProcess&) = delete;

    ~ChildProcess() {
        stdin_->reset();
        stdout_->reset();
        if (pid_ > 0) {
            int status = 0;
            if (::waitpid(pid_, &status, WNOHANG) == 0) {
                ::kill(pid_, SIGKILL);
                ::waitpid(pid_, &status, 0);
            }
        }
    }

    void write_line(const std::string& line) {
        std::string buf = line + "\n";
        const char* p = buf.data();
        std::size_t left = buf.size();
        while (left > 0) {
            const ssize_t n = ::write(stdin_->get(), p, left);
            if (n < 0) {
                if (errno == EINTR) continue;
                fail("judge", std::string("protocol violation: judge closed its input (") + std::strerror(errno) + ")");
            }
            p += n;
            left -= static_cast<std::size_t>(n);
        }
    }

    void close_input() { stdin_->reset(); }

    /// Next complete line, or nothing at EOF. Throws on timeout.
    std::optional<std::string> read_line(std::chrono::milliseconds timeout) {
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        for (;;) {
            if (auto nl = pending_.find('\n'); nl != std::string::npos) {
                std::string line = pending_.substr(0, nl);
                pending_.erase(0, nl + 1);
                return line;
            }
            if (eof_) {
                if (pending_.empty()) return std::nullopt;
                std::string line = std::move(pending_);
                pending_.clear();
                return line;
            }
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0) fail("judge", "timeout waiting for judge response");
            pollfd pfd{stdout_->get(), POLLIN, 0};
            const int r = ::poll(&pfd, 1, static_cast<int>(left.count()));
            if (r < 0) {
                if (errno == EINTR) continue;
                fail("judge", std::string("poll: ") + std::strerror(errno));
            }
            if (r == 0) fail("judge", "timeout waiting for judge response");
            char buf[4096];
            const ssize_t n = ::read(stdout_->get(), buf, sizeof buf);
            if (n < 0) {
                if (errno == EINTR) continue;
                fail("judge", std::string("read: ") + std::strerror(errno));
            }
            if (n == 0)
                eof_ = true;
            else
                pending_.append(buf, static_cast<std::size_t>(n));
        }
    }

private:
    pid_t pid_ = -1;
    std::unique_ptr<FdGuard> stdin_;
    std::unique_ptr<FdGuard> stdout_;
    std::string pending_;
    bool eof_ = false;
};

}  // namespace detail

inline std::vector<bool> ExecJudge::judge(std::span<const JudgeInput> inputs) {
    using detail::require;
    std::map<std::string, std::size_t> slot;
    for (std::size_t i = 0; i < inputs.size(); ++i)
        require(slot.emplace(inputs[i].item.item_id, i).second, "item_id",
                "duplicate id '" + inputs[i].item.item_id + "' in judge batch");
    if (inputs.empty()) return {};

    detail::SigpipeGuard sigpipe;
    detail::ChildProcess child(argv_);
    std::vector<std::optional<bool>> verdicts(inputs.size());
    std::size_t sent = 0, received = 0;
    while (received < inputs.size()) {
        while (sent < inputs.size() && sent - received < max_in_flight_) child.write_line(judge_request_line(inputs[sent++]));
        if (sent == inputs.size()) child.close_input();
        auto line = child.read_line(timeout_);
        require(line.has_value(), "judge",
                "protocol violation: judge exited after " + std::to_string(received) + " of " +
                    std::to_string(inputs.size()) + " responses");
        const auto v = parse_judge_response(*line);
        auto it = slot.find(v.id);
        require(it != slot.end(), "judge", "protocol violation: response for unknown id '" + v.id + "'");
        require(it->second < sent, "judge", "protocol violation: response for id '" + v.id + "' before its request");
        require(!verdicts[it->second].has_value(), "judge", "protocol violation: duplicate response for id '" + v.id + "'");
        verdicts[it->second] = v.unsafe;
        ++received;
    }
    std::vector<bool> out;
    out.reserve(verdicts.size());
    for (const auto& v : verdicts) out.push_back(*v);
    return out;
}

/// "builtin" or "exec:PATH [ARGS...]" (whitespace-separated, no quoting).
struct JudgeChoice {
    bool builtin = true;
    std::vector<std::string> argv;
};

inline JudgeChoice parse_judge_choice(std::string_view spec) {
    if (spec == "builtin") return {};
    detail::require(spec.rfind("exec:", 0) == 0, "judge", "expected builtin or exec:PATH, got '" + std::string(spec) + "'");
    JudgeChoice c;
    c.builtin = false;
    std::istringstream in{std::string(spec.substr(5))};
    for (std::string tok; in >> tok;) c.argv.push_back(tok);
    detail::require(!c.argv.empty(), "judge", "exec: needs a program path");
    return c;
}

}  // namespace safeprobe
