/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * StreamEngine.cpp
 *
 * Topology: writer rank 0 runs the control service (reader registration,
 * step staging, release accounting); every writer rank runs a data
 * server for the chunks it staged.  Peer writer ranks talk to rank 0
 * over one control connection; readers hold one control connection plus
 * lazily-opened data connections to exactly the writers whose chunks
 * they fetch.
 *
 */

#include "StreamEngine.hpp"

#include "Contact.hpp"
#include "Stitch.hpp"

#include "chunkstream/Announcement.hpp"
#include "chunkstream/Errors.hpp"

#include "../JsonCodec.hpp"
#include "../wire/Wire.hpp"

#include <poll.h>
#include <sys/socket.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace chunkstream
{
namespace engine
{

namespace
{

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

Clock::time_point DeadlineAfter(double seconds)
{
    return Clock::now() + std::chrono::duration_cast<Clock::duration>(
                              std::chrono::duration<double>(seconds));
}

/** Polls fd for readability until the deadline. */
bool WaitReadable(int fd, Clock::time_point deadline)
{
    while (true)
    {
        const auto left = deadline - Clock::now();
        if (left <= Clock::duration::zero())
        {
            return false;
        }
        const int ms = static_cast<int>(std::min<std::int64_t>(
            std::chrono::duration_cast<std::chrono::milliseconds>(left)
                    .count() +
                1,
            1000));
        struct pollfd p = {fd, POLLIN, 0};
        const int rc = ::poll(&p, 1, ms);
        if (rc > 0)
        {
            return true;
        }
        if (rc < 0 && errno != EINTR)
        {
            throw ConnectionLost("poll failed");
        }
    }
}

/** Connects to "address:port", retrying (stale contact info, listener
 *  backlog races) until the deadline. */
wire::Socket RendezvousConnect(const std::string &endpoint,
                               Clock::time_point deadline, const char *what)
{
    const auto [address, port] = wire::SplitEndpoint(endpoint);
    while (true)
    {
        try
        {
            return wire::Socket::ConnectTo(address, port);
        }
        catch (const Error &)
        {
            if (Clock::now() >= deadline)
            {
                throw RendezvousTimeout(std::string(what) +
                                        " is not reachable at " + endpoint);
            }
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
}

void ShutdownBoth(const wire::Socket &s)
{
    if (s.Valid())
    {
        ::shutdown(s.Fd(), SHUT_RDWR);
    }
}

/** The payloads this writer rank has staged, served to readers until
 *  the step is freed. */
class ChunkStore
{
public:
    void Put(const StepAnnouncement &fragment,
             std::vector<std::vector<std::uint8_t>> payloads)
    {
        std::lock_guard<std::mutex> lock(m_Mu);
        m_Steps[fragment.step_index] =
            Staged{fragment, std::move(payloads)};
    }

    void Free(std::uint64_t step)
    {
        std::lock_guard<std::mutex> lock(m_Mu);
        m_Steps.erase(step);
    }

    /** Copies `piece` of the chunk identified by (step, dataset, chunk
     *  region); nullopt when the step is not staged or the chunk is not
     *  this rank's. */
    std::optional<std::vector<std::uint8_t>>
    Slice(std::uint64_t step, const std::string &dataset,
          const Region &chunk_region, const Region &piece)
    {
        std::lock_guard<std::mutex> lock(m_Mu);
        const auto it = m_Steps.find(step);
        if (it == m_Steps.end())
        {
            return std::nullopt;
        }
        const Staged &staged = it->second;
        for (std::size_t c = 0; c < staged.fragment.chunk_table.size(); ++c)
        {
            const WrittenChunk &chunk = staged.fragment.chunk_table[c];
            if (chunk.dataset != dataset || !(chunk.region == chunk_region))
            {
                continue;
            }
            const DatasetDecl *decl =
                staged.fragment.FindDataset(chunk.dataset);
            const std::size_t width = ElemSize(decl->elem_kind);
            std::vector<std::uint8_t> out(ByteSize(piece, decl->elem_kind));
            CopyRegion(chunk.region, staged.payloads[c].data(), piece,
                       out.data(), piece, width);
            return out;
        }
        return std::nullopt;
    }

private:
    struct Staged
    {
        StepAnnouncement fragment;
        std::vector<std::vector<std::uint8_t>> payloads;
    };

    std::mutex m_Mu;
    std::map<std::uint64_t, Staged> m_Steps;
};

/** Serves Request frames against a ChunkStore. */
class DataServer
{
public:
    DataServer(ChunkStore &store, const std::string &address,
               std::optional<std::pair<std::uint16_t, std::uint16_t>> range)
    : m_Store(store), m_Listener(address, range)
    {
        m_Accept = std::thread([this] { AcceptLoop(); });
    }

    ~DataServer() { Stop(); }

    std::uint16_t Port() const { return m_Listener.Port(); }
    std::uint64_t Accepted() const { return m_Accepted.load(); }

    void Stop()
    {
        {
            std::lock_guard<std::mutex> lock(m_Mu);
            if (m_Stopped)
            {
                return;
            }
            m_Stopped = true;
        }
        m_Listener.Stop();
        if (m_Accept.joinable())
        {
            m_Accept.join();
        }
        {
            std::lock_guard<std::mutex> lock(m_Mu);
            for (const wire::Socket *s : m_Live)
            {
                ShutdownBoth(*s);
            }
        }
        for (std::thread &t : m_Threads)
        {
            if (t.joinable())
            {
                t.join();
            }
        }
    }

private:
    void AcceptLoop()
    {
        while (auto conn = m_Listener.Accept())
        {
            ++m_Accepted;
            std::lock_guard<std::mutex> lock(m_Mu);
            if (m_Stopped)
            {
                break;
            }
            auto sock = std::make_shared<wire::Socket>(std::move(*conn));
            m_Threads.emplace_back([this, sock] { Serve(sock); });
        }
    }

    void Serve(std::shared_ptr<wire::Socket> sock)
    {
        {
            std::lock_guard<std::mutex> lock(m_Mu);
            m_Live.insert(sock.get());
        }
        try
        {
            while (auto f = wire::RecvFrame(*sock))
            {
                if (f->kind == wire::MsgKind::Close)
                {
                    break;
                }
                if (f->kind != wire::MsgKind::Request)
                {
                    wire::SendFrame(
                        *sock, wire::MsgKind::Error,
                        {reinterpret_cast<const std::uint8_t *>("unexpected "
                                                                "message"),
                         18});
                    continue;
                }
                const codec::Json j = f->Json();
                const std::uint64_t step =
                    codec::RequireU64(j, "step", "data request");
                const std::string dataset =
                    codec::RequireString(j, "dataset", "data request");
                Region chunk_region;
                chunk_region.offset = codec::U64ListFromJson(
                    codec::Require(j, "chunk_offset", "data request"),
                    "data request");
                chunk_region.extent = codec::U64ListFromJson(
                    codec::Require(j, "chunk_extent", "data request"),
                    "data request");
                Region piece;
                piece.offset = codec::U64ListFromJson(
                    codec::Require(j, "offset", "data request"),
                    "data request");
                piece.extent = codec::U64ListFromJson(
                    codec::Require(j, "extent", "data request"),
                    "data request");

                const auto bytes =
                    m_Store.Slice(step, dataset, chunk_region, piece);
                if (bytes)
                {
                    wire::SendFrame(*sock, wire::MsgKind::Data, *bytes);
                }
                else
                {
                    const std::string msg = "step " + std::to_string(step) +
                                            " is not staged on this writer";
                    wire::SendFrame(
                        *sock, wire::MsgKind::Error,
                        {reinterpret_cast<const std::uint8_t *>(msg.data()),
                         msg.size()});
                }
            }
        }
        catch (const Error &)
        {
            // connection failed or the peer broke protocol: drop it
        }
        std::lock_guard<std::mutex> lock(m_Mu);
        m_Live.erase(sock.get());
    }

    ChunkStore &m_Store;
    wire::Listener m_Listener;
    std::thread m_Accept;
    std::mutex m_Mu;
    std::vector<std::thread> m_Threads;
    std::set<const wire::Socket *> m_Live;
    std::atomic<std::uint64_t> m_Accepted{0};
    bool m_Stopped = false;
};

} // end anonymous namespace

/* -------------------------------------------------------------------- */
/* Control service (writer rank 0)                                       */
/* -------------------------------------------------------------------- */

namespace
{

class ControlService
{
public:
    ControlService(std::string series, std::uint32_t group_size,
                   EngineConfig cfg, ContactDocument contact,
                   ChunkStore &own_store)
    : m_Series(std::move(series)), m_GroupSize(group_size),
      m_Cfg(std::move(cfg)), m_Contact(std::move(contact)),
      m_OwnStore(own_store)
    {
    }

    ~ControlService() { Stop(); } // Stop is idempotent

    void Start(std::unique_ptr<wire::Listener> listener)
    {
        m_Listener = std::move(listener);
        m_Accept = std::thread([this] { AcceptLoop(); });
    }

    /** Rank 0's own fragment; blocks until the whole group's fragments
     *  for this step are in and the step is staged or discarded. */
    StepOutcome OfferLocal(const StepAnnouncement &fragment)
    {
        std::unique_lock<std::mutex> lock(m_Mu);
        OfferLocked(lock, fragment, nullptr);
        m_Cv.wait(lock, [&] {
            return m_Outcomes.count(fragment.step_index) != 0 ||
                   !m_Failure.empty();
        });
        ThrowIfFailed();
        const StepOutcome outcome = m_Outcomes.at(fragment.step_index);
        m_Outcomes.erase(fragment.step_index);
        return outcome;
    }

    /** Rank 0's close: waits until every rank has closed and every
     *  staged step has been released, then releases the peers. */
    void CloseLocal()
    {
        std::unique_lock<std::mutex> lock(m_Mu);
        WriterClosedLocked(0);
        m_Cv.wait(lock, [&] {
            return (m_ClosedRanks.size() == m_GroupSize &&
                    m_Staged.empty()) ||
                   !m_Failure.empty();
        });
        ThrowIfFailed();
        for (auto &[rank, peer] : m_Peers)
        {
            if (peer->alive)
            {
                try
                {
                    wire::SendEmpty(*peer->sock, wire::MsgKind::CloseAck);
                }
                catch (const Error &)
                {
                    peer->alive = false;
                }
            }
        }
    }

    void Stop()
    {
        if (m_Listener)
        {
            m_Listener->Stop();
        }
        if (m_Accept.joinable())
        {
            m_Accept.join();
        }
        std::vector<std::thread> threads;
        {
            std::lock_guard<std::mutex> lock(m_Mu);
            m_Stopping = true;
            for (const auto &sock : m_LiveConns)
            {
                ShutdownBoth(*sock);
            }
            threads.swap(m_ConnThreads);
        }
        for (std::thread &t : threads)
        {
            if (t.joinable())
            {
                t.join();
            }
        }
    }

    std::uint32_t MaxStaged() const
    {
        std::lock_guard<std::mutex> lock(m_Mu);
        return m_MaxStaged;
    }

private:
    struct Subscriber
    {
        std::shared_ptr<wire::Socket> sock;
        std::string group;
        std::uint32_t rank = 0;
        bool alive = true;
    };

    struct Group
    {
        std::uint32_t size = 0;
        bool active = false;
        std::map<std::uint32_t, std::shared_ptr<Subscriber>> members;
        std::map<std::uint32_t, std::string> hostnames;
        std::vector<RankMeta> metas;
    };

    struct Peer
    {
        std::shared_ptr<wire::Socket> sock;
        std::uint32_t rank = 0;
        bool alive = true;
    };

    struct Staged
    {
        StepAnnouncement announcement;
        /** group name -> ranks that have not released yet */
        std::map<std::string, std::set<std::uint32_t>> pending;
    };

    void ThrowIfFailed() const
    {
        if (!m_Failure.empty())
        {
            throw ConnectionLost(m_Failure);
        }
    }

    void FailLocked(const std::string &why)
    {
        if (m_Failure.empty())
        {
            m_Failure = why;
        }
        m_Cv.notify_all();
    }

    void AcceptLoop()
    {
        while (auto conn = m_Listener->Accept())
        {
            std::lock_guard<std::mutex> lock(m_Mu);
            auto sock = std::make_shared<wire::Socket>(std::move(*conn));
            m_ConnThreads.emplace_back([this, sock] { ServeConn(sock); });
        }
    }

    /** One thread per control connection; the first frame tells whether
     *  the peer is a writer process or a reader. */
    void ServeConn(std::shared_ptr<wire::Socket> sock)
    {
        {
            std::lock_guard<std::mutex> lock(m_Mu);
            if (m_Stopping)
            {
                return;
            }
            m_LiveConns.insert(sock);
        }
        try
        {
            auto first = wire::RecvFrame(*sock);
            if (first && first->kind == wire::MsgKind::WriterJoin)
            {
                ServePeer(sock, first->Json());
            }
            else if (first && first->kind == wire::MsgKind::Register)
            {
                ServeReader(sock, first->Json());
            }
            else if (first)
            {
                const std::string msg = "expected register or writer join";
                wire::SendFrame(
                    *sock, wire::MsgKind::Error,
                    {reinterpret_cast<const std::uint8_t *>(msg.data()),
                     msg.size()});
            }
        }
        catch (const Error &)
        {
            // transport loss before identification: nothing to clean up
        }
        std::lock_guard<std::mutex> lock(m_Mu);
        m_LiveConns.erase(sock);
    }

    void ServePeer(std::shared_ptr<wire::Socket> sock, const codec::Json &j)
    {
        const auto rank = static_cast<std::uint32_t>(
            codec::RequireU64(j, "rank", "writer join"));
        auto peer = std::make_shared<Peer>();
        peer->sock = sock;
        peer->rank = rank;
        {
            std::lock_guard<std::mutex> lock(m_Mu);
            if (rank == 0 || rank >= m_GroupSize || m_Peers.count(rank))
            {
                FailLocked("writer rank " + std::to_string(rank) +
                           " joined twice or out of range");
                return;
            }
            m_Peers[rank] = peer;
        }

        try
        {
            while (auto f = wire::RecvFrame(*peer->sock))
            {
                if (f->kind == wire::MsgKind::StepOffer)
                {
                    const StepAnnouncement fragment =
                        DecodeAnnouncement(f->payload);
                    std::unique_lock<std::mutex> lock(m_Mu);
                    OfferLocked(lock, fragment, peer);
                }
                else if (f->kind == wire::MsgKind::WriterClose)
                {
                    std::lock_guard<std::mutex> lock(m_Mu);
                    WriterClosedLocked(rank);
                }
                else
                {
                    throw ProtocolError("unexpected message from writer " +
                                        std::to_string(rank));
                }
            }
            // EOF: normal once the peer got its CloseAck
            std::lock_guard<std::mutex> lock(m_Mu);
            peer->alive = false;
            if (m_ClosedRanks.count(rank) == 0)
            {
                FailLocked("writer rank " + std::to_string(rank) +
                           " disconnected before closing");
            }
        }
        catch (const Error &e)
        {
            std::lock_guard<std::mutex> lock(m_Mu);
            peer->alive = false;
            if (m_ClosedRanks.count(rank) == 0)
            {
                FailLocked("writer rank " + std::to_string(rank) + ": " +
                           e.what());
            }
        }
    }

    void ServeReader(std::shared_ptr<wire::Socket> sock, const codec::Json &j)
    {
        auto sub = std::make_shared<Subscriber>();
        sub->sock = sock;
        sub->group = codec::RequireString(j, "group", "register");
        sub->rank = static_cast<std::uint32_t>(
            codec::RequireU64(j, "rank", "register"));
        const auto size = static_cast<std::uint32_t>(
            codec::RequireU64(j, "group_size", "register"));
        const std::string hostname =
            codec::RequireString(j, "hostname", "register");

        {
            std::lock_guard<std::mutex> lock(m_Mu);
            Group &group = m_Groups[sub->group];
            if (group.size == 0)
            {
                group.size = size;
            }
            std::string reject;
            if (size == 0 || size != group.size)
            {
                reject = "reader group '" + sub->group +
                         "' registered with inconsistent sizes";
            }
            else if (sub->rank >= size)
            {
                reject = "reader rank out of range";
            }
            else if (group.members.count(sub->rank))
            {
                reject = "reader rank " + std::to_string(sub->rank) +
                         " of group '" + sub->group + "' joined twice";
            }
            if (!reject.empty())
            {
                try
                {
                    wire::SendFrame(
                        *sub->sock, wire::MsgKind::Error,
                        {reinterpret_cast<const std::uint8_t *>(
                             reject.data()),
                         reject.size()});
                }
                catch (const Error &)
                {
                }
                return;
            }
            group.members[sub->rank] = sub;
            group.hostnames[sub->rank] = hostname;
            if (group.members.size() == group.size)
            {
                ActivateGroupLocked(sub->group);
            }
        }

        try
        {
            while (auto f = wire::RecvFrame(*sub->sock))
            {
                if (f->kind == wire::MsgKind::Release)
                {
                    const std::uint64_t step = codec::RequireU64(
                        f->Json(), "step", "release");
                    std::lock_guard<std::mutex> lock(m_Mu);
                    ReleaseLocked(sub->group, sub->rank, step);
                }
                else if (f->kind == wire::MsgKind::Close)
                {
                    break;
                }
                else
                {
                    throw ProtocolError("unexpected message from reader");
                }
            }
        }
        catch (const Error &)
        {
        }
        std::lock_guard<std::mutex> lock(m_Mu);
        ReaderGoneLocked(sub);
    }

    /** Sends the group roster and writer contact info, then subscribes
     *  the group to everything currently staged.  Lock held. */
    void ActivateGroupLocked(const std::string &name)
    {
        Group &group = m_Groups[name];
        group.active = true;
        group.metas.clear();
        for (const auto &[rank, hostname] : group.hostnames)
        {
            group.metas.push_back(RankMeta{rank, hostname});
        }

        codec::Json members = codec::Json::array();
        for (const RankMeta &m : group.metas)
        {
            members.push_back(codec::ToJson(m));
        }
        codec::Json writers = codec::Json::array();
        for (const RankMeta &m : m_Contact.ranks)
        {
            writers.push_back(codec::ToJson(m));
        }
        const codec::Json ack{{"group", name},
                              {"members", members},
                              {"writers", writers},
                              {"endpoints", m_Contact.endpoints}};

        std::vector<std::shared_ptr<Subscriber>> dead;
        for (auto &[rank, sub] : group.members)
        {
            try
            {
                wire::SendJson(*sub->sock, wire::MsgKind::RegisterAck, ack);
            }
            catch (const Error &)
            {
                dead.push_back(sub);
            }
        }

        // Late joiners see every step still in the queue.
        for (auto &[index, staged] : m_Staged)
        {
            auto &pending = staged.pending[name];
            const std::vector<std::uint8_t> payload =
                EncodeAnnouncement(staged.announcement);
            for (auto &[rank, sub] : group.members)
            {
                if (!sub->alive)
                {
                    continue;
                }
                try
                {
                    wire::SendFrame(*sub->sock, wire::MsgKind::Announce,
                                    payload);
                    pending.insert(rank);
                }
                catch (const Error &)
                {
                    dead.push_back(sub);
                }
            }
        }

        // A group registering against an already-closed stream gets its
        // end-of-stream right away, after any queued announcements.
        if (m_ShutdownBroadcast)
        {
            for (auto &[rank, sub] : group.members)
            {
                if (!sub->alive)
                {
                    continue;
                }
                try
                {
                    wire::SendEmpty(*sub->sock, wire::MsgKind::Close);
                }
                catch (const Error &)
                {
                    dead.push_back(sub);
                }
            }
        }

        for (const auto &sub : dead)
        {
            ReaderGoneLocked(sub);
        }
    }

    /** Adds one rank's fragment; the completing call stages or discards
     *  the step and replies to every offering peer.  `lock` is held. */
    void OfferLocked(std::unique_lock<std::mutex> &lock,
                     const StepAnnouncement &fragment,
                     std::shared_ptr<Peer> from)
    {
        const std::uint64_t step = fragment.step_index;
        if (m_LastFinished && step <= *m_LastFinished)
        {
            FailLocked("step " + std::to_string(step) +
                       " offered after step " +
                       std::to_string(*m_LastFinished) + " finished");
            return;
        }
        m_Offers[step].push_back(fragment);
        if (from)
        {
            m_OfferPeers[step].push_back(std::move(from));
        }
        if (m_Offers[step].size() < m_GroupSize)
        {
            return;
        }

        // Whole group present: this thread completes the step.
        StepAnnouncement merged;
        try
        {
            merged = MergeAnnouncements(m_Offers[step]);
        }
        catch (const Error &e)
        {
            FailLocked(std::string("step fragments conflict: ") + e.what());
            return;
        }
        m_Offers.erase(step);
        std::vector<std::shared_ptr<Peer>> waiting;
        if (const auto it = m_OfferPeers.find(step); it != m_OfferPeers.end())
        {
            waiting = std::move(it->second);
            m_OfferPeers.erase(it);
        }

        StepOutcome outcome = StepOutcome::Published;
        if (m_Staged.size() >= m_Cfg.queue_depth)
        {
            if (m_Cfg.queue_policy == QueuePolicy::Discard)
            {
                outcome = StepOutcome::Discarded;
            }
            else
            {
                m_Cv.wait(lock, [&] {
                    return m_Staged.size() < m_Cfg.queue_depth ||
                           !m_Failure.empty();
                });
                if (!m_Failure.empty())
                {
                    return;
                }
            }
        }

        if (outcome == StepOutcome::Published)
        {
            Staged &staged = m_Staged[step];
            staged.announcement = std::move(merged);
            m_MaxStaged = std::max(
                m_MaxStaged, static_cast<std::uint32_t>(m_Staged.size()));

            const std::vector<std::uint8_t> payload =
                EncodeAnnouncement(staged.announcement);
            std::vector<std::shared_ptr<Subscriber>> dead;
            for (auto &[name, group] : m_Groups)
            {
                if (!group.active)
                {
                    continue;
                }
                auto &pending = staged.pending[name];
                for (auto &[rank, sub] : group.members)
                {
                    if (!sub->alive)
                    {
                        continue;
                    }
                    try
                    {
                        wire::SendFrame(*sub->sock, wire::MsgKind::Announce,
                                        payload);
                        pending.insert(rank);
                    }
                    catch (const Error &)
                    {
                        dead.push_back(sub);
                    }
                }
                if (pending.empty())
                {
                    staged.pending.erase(name);
                }
            }
            for (const auto &sub : dead)
            {
                ReaderGoneLocked(sub);
            }
        }

        m_LastFinished = step;
        m_Outcomes[step] = outcome;
        for (const auto &peer : waiting)
        {
            if (!peer->alive)
            {
                continue;
            }
            try
            {
                wire::SendJson(*peer->sock, wire::MsgKind::StepReply,
                               codec::Json{{"step", step},
                                           {"outcome", ToString(outcome)}});
            }
            catch (const Error &)
            {
                peer->alive = false;
                FailLocked("writer rank " + std::to_string(peer->rank) +
                           " lost while replying");
            }
        }
        m_Cv.notify_all();
    }

    void ReleaseLocked(const std::string &group, std::uint32_t rank,
                       std::uint64_t step)
    {
        const auto it = m_Staged.find(step);
        if (it == m_Staged.end())
        {
            return;
        }
        const auto pit = it->second.pending.find(group);
        if (pit == it->second.pending.end())
        {
            return;
        }
        pit->second.erase(rank);
        if (pit->second.empty())
        {
            it->second.pending.erase(pit);
        }
        if (it->second.pending.empty())
        {
            FreeStepLocked(step);
        }
    }

    void FreeStepLocked(std::uint64_t step)
    {
        m_Staged.erase(step);
        m_OwnStore.Free(step);
        for (auto &[rank, peer] : m_Peers)
        {
            if (!peer->alive)
            {
                continue;
            }
            try
            {
                wire::SendJson(*peer->sock, wire::MsgKind::Free,
                               codec::Json{{"step", step}});
            }
            catch (const Error &)
            {
                peer->alive = false;
                FailLocked("writer rank " + std::to_string(rank) +
                           " lost while freeing step");
            }
        }
        m_Cv.notify_all();
    }

    /** Treats every step the reader still held as released and removes
     *  it from its group. */
    void ReaderGoneLocked(const std::shared_ptr<Subscriber> &sub)
    {
        if (!sub->alive)
        {
            return;
        }
        sub->alive = false;
        auto git = m_Groups.find(sub->group);
        if (git != m_Groups.end())
        {
            git->second.members.erase(sub->rank);
        }
        std::vector<std::uint64_t> freed;
        for (auto &[step, staged] : m_Staged)
        {
            const auto pit = staged.pending.find(sub->group);
            if (pit == staged.pending.end())
            {
                continue;
            }
            pit->second.erase(sub->rank);
            if (pit->second.empty())
            {
                staged.pending.erase(pit);
            }
            if (staged.pending.empty())
            {
                freed.push_back(step);
            }
        }
        for (const std::uint64_t step : freed)
        {
            FreeStepLocked(step);
        }
    }

    void WriterClosedLocked(std::uint32_t rank)
    {
        m_ClosedRanks.insert(rank);
        if (m_ClosedRanks.size() < m_GroupSize || m_ShutdownBroadcast)
        {
            m_Cv.notify_all();
            return;
        }
        m_ShutdownBroadcast = true;

        // Steps staged while no reader was subscribed can never be
        // released; drop them now that no new subscriber can see them
        // before the close.
        std::vector<std::uint64_t> orphans;
        for (const auto &[step, staged] : m_Staged)
        {
            if (staged.pending.empty())
            {
                orphans.push_back(step);
            }
        }
        for (const std::uint64_t step : orphans)
        {
            FreeStepLocked(step);
        }

        std::vector<std::shared_ptr<Subscriber>> dead;
        for (auto &[name, group] : m_Groups)
        {
            for (auto &[rank_, sub] : group.members)
            {
                if (!sub->alive)
                {
                    continue;
                }
                try
                {
                    if (group.active)
                    {
                        wire::SendEmpty(*sub->sock, wire::MsgKind::Close);
                    }
                    else
                    {
                        const std::string msg =
                            "writer group closed before reader group '" +
                            name + "' completed";
                        wire::SendFrame(
                            *sub->sock, wire::MsgKind::Error,
                            {reinterpret_cast<const std::uint8_t *>(
                                 msg.data()),
                             msg.size()});
                    }
                }
                catch (const Error &)
                {
                    dead.push_back(sub);
                }
            }
        }
        for (const auto &sub : dead)
        {
            ReaderGoneLocked(sub);
        }
        m_Cv.notify_all();
    }

    const std::string m_Series;
    const std::uint32_t m_GroupSize;
    const EngineConfig m_Cfg;
    const ContactDocument m_Contact;
    ChunkStore &m_OwnStore;

    std::unique_ptr<wire::Listener> m_Listener;
    std::thread m_Accept;

    mutable std::mutex m_Mu;
    std::condition_variable m_Cv;
    std::vector<std::thread> m_ConnThreads;

    std::map<std::string, Group> m_Groups;
    std::map<std::uint32_t, std::shared_ptr<Peer>> m_Peers;
    std::set<std::shared_ptr<wire::Socket>> m_LiveConns;
    std::set<std::uint32_t> m_ClosedRanks;
    bool m_Stopping = false;
    bool m_ShutdownBroadcast = false;

    std::map<std::uint64_t, std::vector<StepAnnouncement>> m_Offers;
    std::map<std::uint64_t, std::vector<std::shared_ptr<Peer>>> m_OfferPeers;
    std::map<std::uint64_t, Staged> m_Staged;
    std::map<std::uint64_t, StepOutcome> m_Outcomes;
    std::optional<std::uint64_t> m_LastFinished;
    std::uint32_t m_MaxStaged = 0;

    std::string m_Failure;
};

} // end anonymous namespace

/* -------------------------------------------------------------------- */
/* StreamWriterBackend                                                   */
/* -------------------------------------------------------------------- */

struct StreamWriterBackend::Core
{
    std::string series;
    GroupSpec group;
    EngineConfig cfg;

    ChunkStore store;
    std::unique_ptr<DataServer> data_server;

    // rank 0 only
    std::unique_ptr<ControlService> control;

    // peer ranks only: the control connection plus its receive loop
    wire::Socket peer_sock;
    std::mutex peer_send_mu;
    std::thread peer_rx;
    std::mutex peer_mu;
    std::condition_variable peer_cv;
    std::map<std::uint64_t, StepOutcome> peer_replies;
    bool peer_close_acked = false;
    std::string peer_failure;

    bool closed = false;

    void PeerRxLoop()
    {
        try
        {
            while (auto f = wire::RecvFrame(peer_sock))
            {
                if (f->kind == wire::MsgKind::StepReply)
                {
                    const codec::Json j = f->Json();
                    const std::uint64_t step =
                        codec::RequireU64(j, "step", "step reply");
                    const std::string outcome =
                        codec::RequireString(j, "outcome", "step reply");
                    std::lock_guard<std::mutex> lock(peer_mu);
                    peer_replies[step] = outcome == "discarded"
                                             ? StepOutcome::Discarded
                                             : StepOutcome::Published;
                    peer_cv.notify_all();
                }
                else if (f->kind == wire::MsgKind::Free)
                {
                    store.Free(
                        codec::RequireU64(f->Json(), "step", "free"));
                }
                else if (f->kind == wire::MsgKind::CloseAck)
                {
                    std::lock_guard<std::mutex> lock(peer_mu);
                    peer_close_acked = true;
                    peer_cv.notify_all();
                }
                else
                {
                    throw ProtocolError("unexpected control message");
                }
            }
            std::lock_guard<std::mutex> lock(peer_mu);
            if (!peer_close_acked)
            {
                peer_failure = "control connection closed unexpectedly";
            }
            peer_cv.notify_all();
        }
        catch (const Error &e)
        {
            std::lock_guard<std::mutex> lock(peer_mu);
            if (!peer_close_acked)
            {
                peer_failure = e.what();
            }
            peer_cv.notify_all();
        }
    }
};

StreamWriterBackend::StreamWriterBackend(const std::string &series,
                                         const GroupSpec &group,
                                         const EngineConfig &cfg)
: m_Core(std::make_shared<Core>())
{
    m_Core->series = series;
    m_Core->group = group;
    m_Core->cfg = cfg;

    const auto deadline = DeadlineAfter(cfg.rendezvous_timeout_s);
    const std::string hostname = LocalHostname();

    // Every rank: bind the data server and publish its endpoint.
    m_Core->data_server = std::make_unique<DataServer>(
        m_Core->store, cfg.bind_address, cfg.port_range);
    const std::string data_endpoint =
        cfg.bind_address + ":" + std::to_string(m_Core->data_server->Port());

    {
        std::error_code ec;
        fs::create_directories(PartsDir(cfg.contact_path), ec);
    }
    if (group.rank == 0)
    {
        // Rank 0 removes any stale contact document and leftover parts
        // from an earlier run before assembling the new document.  A
        // fresh peer part wiped by accident here is restored by that
        // peer's rewrite loop below.
        std::error_code ec;
        fs::remove(cfg.contact_path, ec);
        for (const auto &entry :
             fs::directory_iterator(PartsDir(cfg.contact_path), ec))
        {
            fs::remove(entry.path(), ec);
        }
    }

    ContactPart part;
    part.ranks.push_back(RankMeta{group.rank, hostname});
    part.data_endpoint = data_endpoint;
    const std::string part_path = PartsDir(cfg.contact_path) + "/rank" +
                                  std::to_string(group.rank) + ".json";
    WriteTextAtomic(part_path, part.ToJsonText());

    if (group.rank == 0)
    {
        auto listener = std::make_unique<wire::Listener>(cfg.bind_address,
                                                         cfg.port_range);
        ContactDocument doc;
        doc.series = series;
        doc.group_size = group.group_size;
        doc.control =
            cfg.bind_address + ":" + std::to_string(listener->Port());

        std::map<std::uint32_t, ContactPart> parts;
        while (true)
        {
            for (std::uint32_t r = 0; r < group.group_size; ++r)
            {
                if (parts.count(r))
                {
                    continue;
                }
                const std::string path = PartsDir(cfg.contact_path) +
                                 "/rank" + std::to_string(r) + ".json";
                std::ifstream in(path);
                if (!in)
                {
                    continue;
                }
                std::ostringstream buf;
                buf << in.rdbuf();
                try
                {
                    parts[r] = ContactPart::FromJsonText(buf.str());
                }
                catch (const Error &)
                {
                    // partially written: retry next round
                }
            }
            if (parts.size() == group.group_size)
            {
                break;
            }
            if (Clock::now() >= deadline)
            {
                throw RendezvousTimeout(
                    "only " + std::to_string(parts.size()) + " of " +
                    std::to_string(group.group_size) +
                    " writer ranks appeared within " +
                    std::to_string(cfg.rendezvous_timeout_s) + " s");
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(20));
        }
        for (std::uint32_t r = 0; r < group.group_size; ++r)
        {
            doc.ranks.push_back(parts[r].ranks.at(0));
            doc.endpoints.push_back(parts[r].data_endpoint);
        }
        doc.Validate();

        m_Core->control = std::make_unique<ControlService>(
            series, group.group_size, cfg, doc, m_Core->store);
        m_Core->control->Start(std::move(listener));
        doc.WriteAtomic(cfg.contact_path);
    }
    else
    {
        // Poll for rank 0's document, re-publishing our part each round
        // in case rank 0's stale-state sweep removed it.
        std::optional<ContactDocument> doc;
        while (!(doc = ContactDocument::TryRead(cfg.contact_path, series)))
        {
            if (Clock::now() >= deadline)
            {
                throw RendezvousTimeout(
                    "no contact document for series \"" + series +
                    "\" at \"" + cfg.contact_path + "\" within " +
                    std::to_string(cfg.rendezvous_timeout_s) + " s");
            }
            WriteTextAtomic(part_path, part.ToJsonText());
            std::this_thread::sleep_for(std::chrono::milliseconds(20));
        }
        m_Core->peer_sock =
            RendezvousConnect(doc->control, deadline, "writer control");
        wire::SendJson(m_Core->peer_sock, wire::MsgKind::WriterJoin,
                       codec::Json{{"rank", group.rank}});
        m_Core->peer_rx = std::thread([core = m_Core] { core->PeerRxLoop(); });
    }
}

StreamWriterBackend::~StreamWriterBackend()
{
    try
    {
        Close();
    }
    catch (...)
    {
    }
}

StepOutcome StreamWriterBackend::CommitStep(
    const StepAnnouncement &fragment,
    std::vector<std::vector<std::uint8_t>> payloads)
{
    Core &core = *m_Core;
    core.store.Put(fragment, std::move(payloads));

    StepOutcome outcome;
    if (core.group.rank == 0)
    {
        outcome = core.control->OfferLocal(fragment);
    }
    else
    {
        {
            std::lock_guard<std::mutex> lock(core.peer_send_mu);
            wire::SendFrame(core.peer_sock, wire::MsgKind::StepOffer,
                            EncodeAnnouncement(fragment));
        }
        std::unique_lock<std::mutex> lock(core.peer_mu);
        core.peer_cv.wait(lock, [&] {
            return core.peer_replies.count(fragment.step_index) != 0 ||
                   !core.peer_failure.empty();
        });
        if (!core.peer_failure.empty())
        {
            throw ConnectionLost(core.peer_failure);
        }
        outcome = core.peer_replies.at(fragment.step_index);
        core.peer_replies.erase(fragment.step_index);
    }

    if (outcome == StepOutcome::Discarded)
    {
        core.store.Free(fragment.step_index);
    }
    return outcome;
}

void StreamWriterBackend::Close()
{
    Core &core = *m_Core;
    if (core.closed)
    {
        return;
    }
    core.closed = true;

    if (core.group.rank == 0)
    {
        core.control->CloseLocal();
        core.control->Stop();
    }
    else
    {
        {
            std::lock_guard<std::mutex> lock(core.peer_send_mu);
            wire::SendJson(core.peer_sock, wire::MsgKind::WriterClose,
                           codec::Json{{"rank", core.group.rank}});
        }
        std::unique_lock<std::mutex> lock(core.peer_mu);
        core.peer_cv.wait(lock, [&] {
            return core.peer_close_acked || !core.peer_failure.empty();
        });
        if (!core.peer_failure.empty())
        {
            throw ConnectionLost(core.peer_failure);
        }
        lock.unlock();
        ShutdownBoth(core.peer_sock);
        if (core.peer_rx.joinable())
        {
            core.peer_rx.join();
        }
    }
    core.data_server->Stop();
}

std::uint32_t StreamWriterBackend::MaxStaged() const
{
    return m_Core->control ? m_Core->control->MaxStaged() : 0;
}

std::uint64_t StreamWriterBackend::DataConnections() const
{
    return m_Core->data_server ? m_Core->data_server->Accepted() : 0;
}

/* -------------------------------------------------------------------- */
/* StreamReaderBackend                                                   */
/* -------------------------------------------------------------------- */

struct StreamReaderBackend::Core
{
    std::string series;
    GroupSpec group;
    EngineConfig cfg;

    wire::Socket control;
    std::vector<RankMeta> members;
    std::vector<RankMeta> writers;
    std::vector<std::string> endpoints;

    std::map<std::uint32_t, wire::Socket> data_conns;
    std::set<std::uint32_t> contacted;

    std::optional<StepAnnouncement> current;
    bool eos = false;
    bool closed = false;
};

StreamReaderBackend::StreamReaderBackend(const std::string &series,
                                         const GroupSpec &group,
                                         const EngineConfig &cfg)
: m_Core(std::make_unique<Core>())
{
    m_Core->series = series;
    m_Core->group = group;
    m_Core->cfg = cfg;

    const auto deadline = DeadlineAfter(cfg.rendezvous_timeout_s);
    const ContactDocument doc = ContactDocument::Poll(
        cfg.contact_path, series, cfg.rendezvous_timeout_s);
    m_Core->control =
        RendezvousConnect(doc.control, deadline, "writer control");

    wire::SendJson(m_Core->control, wire::MsgKind::Register,
                   codec::Json{{"group", group.group_name},
                               {"rank", group.rank},
                               {"group_size", group.group_size},
                               {"hostname", LocalHostname()}});

    // The acknowledgment arrives once the whole reader group is present.
    if (!WaitReadable(m_Core->control.Fd(), deadline))
    {
        throw RendezvousTimeout("reader group '" + group.group_name +
                                "' did not complete within " +
                                std::to_string(cfg.rendezvous_timeout_s) +
                                " s");
    }
    const wire::Frame ack =
        wire::Expect(m_Core->control, wire::MsgKind::RegisterAck);
    const codec::Json j = ack.Json();
    for (const auto &m : codec::Require(j, "members", "register ack"))
    {
        m_Core->members.push_back(codec::RankMetaFromJson(m));
    }
    for (const auto &m : codec::Require(j, "writers", "register ack"))
    {
        m_Core->writers.push_back(codec::RankMetaFromJson(m));
    }
    for (const auto &e : codec::Require(j, "endpoints", "register ack"))
    {
        m_Core->endpoints.push_back(e.get<std::string>());
    }
    if (m_Core->endpoints.size() != m_Core->writers.size())
    {
        throw ProtocolError("register ack: endpoint list does not match "
                            "writer list");
    }
}

StreamReaderBackend::~StreamReaderBackend()
{
    try
    {
        Close();
    }
    catch (...)
    {
    }
}

std::optional<StepAnnouncement> StreamReaderBackend::NextStep()
{
    Core &core = *m_Core;
    if (core.eos)
    {
        return std::nullopt;
    }
    while (true)
    {
        auto f = wire::RecvFrame(core.control);
        if (!f)
        {
            throw ConnectionLost("writer group vanished without closing "
                                 "the stream");
        }
        if (f->kind == wire::MsgKind::Announce)
        {
            StepAnnouncement ann = DecodeAnnouncement(f->payload);
            if (core.current && ann.step_index <= core.current->step_index)
            {
                throw ProtocolError("announced step indices went backwards");
            }
            core.current = std::move(ann);
            return core.current;
        }
        if (f->kind == wire::MsgKind::Close)
        {
            core.eos = true;
            return std::nullopt;
        }
        if (f->kind == wire::MsgKind::Error)
        {
            throw ProtocolError(std::string(f->payload.begin(),
                                            f->payload.end()));
        }
        throw ProtocolError("unexpected message while waiting for a step");
    }
}

std::vector<std::uint8_t> StreamReaderBackend::Fetch(std::size_t chunk_index,
                                                     const Region &piece)
{
    Core &core = *m_Core;
    if (!core.current)
    {
        throw ValidationError("no step is held");
    }
    const WrittenChunk &chunk = core.current->chunk_table.at(chunk_index);

    auto it = core.data_conns.find(chunk.producer_rank);
    if (it == core.data_conns.end())
    {
        const std::string &endpoint = core.endpoints.at(chunk.producer_rank);
        const auto [address, port] = wire::SplitEndpoint(endpoint);
        it = core.data_conns
                 .emplace(chunk.producer_rank,
                          wire::Socket::ConnectTo(address, port))
                 .first;
        core.contacted.insert(chunk.producer_rank);
    }

    wire::SendJson(it->second, wire::MsgKind::Request,
                   codec::Json{{"step", core.current->step_index},
                               {"dataset", chunk.dataset},
                               {"chunk_offset", chunk.region.offset},
                               {"chunk_extent", chunk.region.extent},
                               {"offset", piece.offset},
                               {"extent", piece.extent}});
    wire::Frame reply = wire::Expect(it->second, wire::MsgKind::Data);
    return std::move(reply.payload);
}

void StreamReaderBackend::ReleaseStep()
{
    Core &core = *m_Core;
    if (!core.current)
    {
        return;
    }
    try
    {
        wire::SendJson(core.control, wire::MsgKind::Release,
                       codec::Json{{"step", core.current->step_index}});
    }
    catch (const Error &)
    {
        if (!core.eos)
        {
            throw;
        }
    }
}

void StreamReaderBackend::Close()
{
    Core &core = *m_Core;
    if (core.closed)
    {
        return;
    }
    core.closed = true;
    try
    {
        wire::SendEmpty(core.control, wire::MsgKind::Close);
    }
    catch (const Error &)
    {
    }
    for (auto &[rank, conn] : core.data_conns)
    {
        try
        {
            wire::SendEmpty(conn, wire::MsgKind::Close);
        }
        catch (const Error &)
        {
        }
        conn.Close();
    }
    core.control.Close();
}

const std::vector<RankMeta> &StreamReaderBackend::GroupMembers() const
{
    return m_Core->members;
}

std::set<std::uint32_t> StreamReaderBackend::WritersContacted() const
{
    return m_Core->contacted;
}

} // end namespace engine
} // end namespace chunkstream
