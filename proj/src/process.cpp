#include "evoconfig/process.hpp"

#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstring>
#include <stdexcept>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

namespace evoconfig {

namespace {

using Clock = std::chrono::steady_clock;

void close_fd(int& fd) {
    if (fd >= 0) ::close(fd);
    fd = -1;
}

}  // namespace

ProcessResult PosixProcessRunner::run(const std::vector<std::string>& argv, double timeout_s) {
    if (argv.empty()) throw std::invalid_argument("empty argv");
    ProcessResult result;
    int out_pipe[2], err_pipe[2], exec_pipe[2];
    if (::pipe(out_pipe) != 0 || ::pipe(err_pipe) != 0 || ::pipe2(exec_pipe, O_CLOEXEC) != 0)
        throw std::runtime_error(std::string("pipe: ") + std::strerror(errno));

    const auto start = Clock::now();
    pid_t pid = ::fork();
    if (pid < 0) throw std::runtime_error(std::string("fork: ") + std::strerror(errno));
    if (pid == 0) {
        ::setpgid(0, 0);
        ::dup2(out_pipe[1], STDOUT_FILENO);
        ::dup2(err_pipe[1], STDERR_FILENO);
        ::close(out_pipe[0]);
        ::close(err_pipe[0]);
        ::close(exec_pipe[0]);
        std::vector<char*> args;
        for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
        args.push_back(nullptr);
        ::execvp(args[0], args.data());
        int err = errno;
        (void)!::write(exec_pipe[1], &err, sizeof(err));
        ::_exit(127);
    }
    ::setpgid(pid, pid);
    ::close(out_pipe[1]);
    ::close(err_pipe[1]);
    ::close(exec_pipe[1]);

    int exec_errno = 0;
    if (::read(exec_pipe[0], &exec_errno, sizeof(exec_errno)) == sizeof(exec_errno)) result.spawn_failed = true;
    ::close(exec_pipe[0]);

    int fds[2] = {out_pipe[0], err_pipe[0]};
    std::string* sinks[2] = {&result.stdout_text, &result.stderr_text};
    const auto deadline = start + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(timeout_s));
    auto kill_at = Clock::time_point::max();
    bool term_sent = false, kill_sent = false;

    while (fds[0] >= 0 || fds[1] >= 0) {
        auto now = Clock::now();
        if (!term_sent && now >= deadline) {
            ::kill(-pid, SIGTERM);
            term_sent = true;
            result.timed_out = true;
            kill_at = now + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(grace_));
        }
        if (term_sent && !kill_sent && now >= kill_at) {
            ::kill(-pid, SIGKILL);
            kill_sent = true;
        }
        if (kill_sent && now >= kill_at + std::chrono::seconds(1)) {
            // descendants holding the pipes open; stop reading
            close_fd(fds[0]);
            close_fd(fds[1]);
            break;
        }
        pollfd pfds[2];
        nfds_t n = 0;
        int map[2];
        for (int i = 0; i < 2; ++i) {
            if (fds[i] < 0) continue;
            pfds[n] = {fds[i], POLLIN, 0};
            map[n++] = i;
        }
        int rc = ::poll(pfds, n, 100);
        if (rc < 0 && errno != EINTR) break;
        for (nfds_t k = 0; rc > 0 && k < n; ++k) {
            if (!(pfds[k].revents & (POLLIN | POLLHUP | POLLERR))) continue;
            char buf[8192];
            ssize_t got = ::read(pfds[k].fd, buf, sizeof(buf));
            if (got > 0) sinks[map[k]]->append(buf, static_cast<std::size_t>(got));
            else close_fd(fds[map[k]]);
        }
    }

    int status = 0;
    while (true) {
        pid_t w = ::waitpid(pid, &status, WNOHANG);
        if (w == pid || (w < 0 && errno != EINTR)) break;
        auto now = Clock::now();
        if (!term_sent && now >= deadline) {
            ::kill(-pid, SIGTERM);
            term_sent = true;
            result.timed_out = true;
            kill_at = now + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(grace_));
        }
        if (term_sent && !kill_sent && now >= kill_at) {
            ::kill(-pid, SIGKILL);
            kill_sent = true;
        }
        ::usleep(10000);
    }
    if (WIFEXITED(status)) result.exit_code = WEXITSTATUS(status);
    else if (WIFSIGNALED(status)) result.exit_code = 128 + WTERMSIG(status);
    if (result.timed_out) result.exit_code = 124;
    result.duration = std::chrono::duration<double>(Clock::now() - start).count();
    if (result.spawn_failed) result.stderr_text = std::string("exec failed: ") + std::strerror(exec_errno);
    return result;
}

}  // namespace evoconfig
