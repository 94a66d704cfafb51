/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * TestSupport.hpp : scratch directories and rank threads for the
 *                   engine integration tests
 *
 */

#ifndef CHUNKSTREAM_TESTSUPPORT_HPP
#define CHUNKSTREAM_TESTSUPPORT_HPP

#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <unistd.h>

namespace testsupport
{

/** A unique directory removed when the test is done. */
class ScratchDir
{
public:
    explicit ScratchDir(const std::string &tag)
    {
        static std::atomic<std::uint64_t> counter{0};
        m_Path = std::filesystem::temp_directory_path() /
                 ("chunkstream-" + tag + "-" + std::to_string(::getpid()) +
                  "-" + std::to_string(counter.fetch_add(1)));
        std::filesystem::create_directories(m_Path);
    }

    ~ScratchDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(m_Path, ec);
    }

    std::string File(const std::string &name) const
    {
        return (m_Path / name).string();
    }

private:
    std::filesystem::path m_Path;
};

/** Runs one thread per group rank (collective opens block, so every
 *  rank needs its own thread) and rethrows the first captured exception
 *  on the joining thread, where the test framework can see it. */
class ThreadGroup
{
public:
    template <class F>
    void Spawn(F body)
    {
        m_Threads.emplace_back([this, body = std::move(body)]() mutable {
            try
            {
                body();
            }
            catch (...)
            {
                std::lock_guard<std::mutex> lock(m_Mu);
                m_Errors.push_back(std::current_exception());
            }
        });
    }

    void Join()
    {
        for (std::thread &t : m_Threads)
        {
            if (t.joinable())
            {
                t.join();
            }
        }
        m_Threads.clear();
        if (!m_Errors.empty())
        {
            std::exception_ptr first = m_Errors.front();
            m_Errors.clear();
            std::rethrow_exception(first);
        }
    }

    ~ThreadGroup()
    {
        for (std::thread &t : m_Threads)
        {
            if (t.joinable())
            {
                t.join();
            }
        }
    }

private:
    std::vector<std::thread> m_Threads;
    std::mutex m_Mu;
    std::vector<std::exception_ptr> m_Errors;
};

/** Deterministic per-(seed, index) payload byte. */
inline std::uint8_t PatternByte(std::uint64_t seed, std::uint64_t i)
{
    std::uint64_t x = seed * 0x9E3779B97F4A7C15ull + i * 0xBF58476D1CE4E5B9ull;
    x ^= x >> 31;
    return static_cast<std::uint8_t>(x & 0xFF);
}

inline std::vector<std::uint8_t> Pattern(std::uint64_t seed, std::size_t n)
{
    std::vector<std::uint8_t> v(n);
    for (std::size_t i = 0; i < n; ++i)
    {
        v[i] = PatternByte(seed, i);
    }
    return v;
}

} // end namespace testsupport

#endif /* CHUNKSTREAM_TESTSUPPORT_HPP */
