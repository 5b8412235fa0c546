#pragma once

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstring>
#include <string>
#include <vector>

#include "common.hpp"

namespace ctfagent {

struct CommandResult {
    std::string output;        // merged stdout+stderr, possibly truncated
    std::size_t full_length = 0;
    bool truncated = false;
    bool timed_out = false;
    int exit_status = -1;
    std::chrono::milliseconds duration{0};
};

inline constexpr const char* kTruncationMarker = "\n[output truncated]";

// Forked service children exec immediately; close-on-exec keeps them from
// inheriting unrelated sockets and pipe ends (which would defer peer EOF).
// Fds must be created with CLOEXEC atomically (pipe2/accept4/SOCK_CLOEXEC):
// a fork on another thread between creation and a later fcntl leaks the fd.

// Run `sh -c command` in `cwd`, merged output, wall-clock limit, output cap.
// Child is killed (SIGKILL to its process group) on timeout.
inline CommandResult run_command(const std::string& command, const fs::path& cwd,
                                 std::chrono::milliseconds timeout,
                                 std::size_t output_cap = 64 * 1024) {
    CommandResult res;
    int pipefd[2];
    if (pipe2(pipefd, O_CLOEXEC) != 0) throw std::runtime_error("pipe() failed");

    auto start = std::chrono::steady_clock::now();
    pid_t pid = fork();
    if (pid < 0) {
        close(pipefd[0]);
        close(pipefd[1]);
        throw std::runtime_error("fork() failed");
    }
    if (pid == 0) {
        setpgid(0, 0);
        if (!cwd.empty() && chdir(cwd.c_str()) != 0) _exit(127);
        dup2(pipefd[1], STDOUT_FILENO);
        dup2(pipefd[1], STDERR_FILENO);
        close(pipefd[0]);
        close(pipefd[1]);
        execl("/bin/sh", "sh", "-c", command.c_str(), (char*)nullptr);
        _exit(127);
    }
    close(pipefd[1]);

    std::string raw;
    auto deadline = start + timeout;
    bool open = true;
    while (open) {
        auto now = std::chrono::steady_clock::now();
        if (now >= deadline) {
            res.timed_out = true;
            kill(-pid, SIGKILL);
            break;
        }
        int wait_ms = static_cast<int>(
            std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count());
        pollfd pfd{pipefd[0], POLLIN, 0};
        int pr = poll(&pfd, 1, std::max(wait_ms, 1));
        if (pr > 0) {
            char buf[4096];
            ssize_t n = read(pipefd[0], buf, sizeof(buf));
            if (n <= 0) {
                open = false;
            } else {
                raw.append(buf, static_cast<std::size_t>(n));
            }
        }
    }
    // drain whatever is already buffered after a kill
    if (res.timed_out) {
        fcntl(pipefd[0], F_SETFL, O_NONBLOCK);
        char buf[4096];
        ssize_t n;
        while ((n = read(pipefd[0], buf, sizeof(buf))) > 0)
            raw.append(buf, static_cast<std::size_t>(n));
    }
    close(pipefd[0]);

    int status = 0;
    waitpid(pid, &status, 0);
    res.exit_status = WIFEXITED(status) ? WEXITSTATUS(status) : -WTERMSIG(status);
    res.duration = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - start);

    res.full_length = raw.size();
    if (raw.size() > output_cap) {
        res.truncated = true;
        raw.resize(output_cap);
        raw += kTruncationMarker;
    }
    res.output = std::move(raw);
    return res;
}

// A child process with stdin/stdout pipes, used by the harness to bridge
// challenge scripts to sockets.
class PipedProcess {
public:
    PipedProcess(const std::string& executable, const fs::path& cwd) {
        int in_pipe[2], out_pipe[2];
        if (pipe2(in_pipe, O_CLOEXEC) != 0 || pipe2(out_pipe, O_CLOEXEC) != 0)
            throw std::runtime_error("pipe() failed");
        pid_ = fork();
        if (pid_ < 0) throw std::runtime_error("fork() failed");
        if (pid_ == 0) {
            setpgid(0, 0);
            if (!cwd.empty() && chdir(cwd.c_str()) != 0) _exit(127);
            dup2(in_pipe[0], STDIN_FILENO);
            dup2(out_pipe[1], STDOUT_FILENO);
            close(in_pipe[0]);
            close(in_pipe[1]);
            close(out_pipe[0]);
            close(out_pipe[1]);
            execl("/bin/sh", "sh", executable.c_str(), (char*)nullptr);
            _exit(127);
        }
        close(in_pipe[0]);
        close(out_pipe[1]);
        stdin_fd_ = in_pipe[1];
        stdout_fd_ = out_pipe[0];
    }

    PipedProcess(const PipedProcess&) = delete;
    PipedProcess& operator=(const PipedProcess&) = delete;

    ~PipedProcess() { terminate(); }

    int stdin_fd() const { return stdin_fd_; }
    int stdout_fd() const { return stdout_fd_; }
    pid_t pid() const { return pid_; }

    void close_stdin() {
        if (stdin_fd_ >= 0) {
            close(stdin_fd_);
            stdin_fd_ = -1;
        }
    }

    // Close pipes, give the child a brief chance to exit, then kill and reap.
    void terminate() {
        if (pid_ < 0) return;
        close_stdin();
        if (stdout_fd_ >= 0) {
            close(stdout_fd_);
            stdout_fd_ = -1;
        }
        int status = 0;
        for (int i = 0; i < 20; ++i) {
            if (waitpid(pid_, &status, WNOHANG) == pid_) {
                pid_ = -1;
                return;
            }
            usleep(10 * 1000);
        }
        kill(-pid_, SIGKILL);
        kill(pid_, SIGKILL);
        waitpid(pid_, &status, 0);
        pid_ = -1;
    }

private:
    pid_t pid_ = -1;
    int stdin_fd_ = -1;
    int stdout_fd_ = -1;
};

}  // namespace ctfagent
