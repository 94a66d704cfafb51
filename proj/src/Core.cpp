/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * Core.cpp
 *
 */

#include "chunkstream/Core.hpp"
#include "chunkstream/Errors.hpp"

#include <cstdlib>
#include <sstream>

#include <unistd.h>

namespace chunkstream
{

std::size_t ElemSize(ElemKind kind)
{
    switch (kind)
    {
    case ElemKind::Int8:
    case ElemKind::UInt8:
        return 1;
    case ElemKind::Int16:
    case ElemKind::UInt16:
        return 2;
    case ElemKind::Int32:
    case ElemKind::UInt32:
    case ElemKind::Float32:
        return 4;
    case ElemKind::Int64:
    case ElemKind::UInt64:
    case ElemKind::Float64:
        return 8;
    }
    throw ValidationError("unknown element kind");
}

std::string ToString(ElemKind kind)
{
    switch (kind)
    {
    case ElemKind::Int8:
        return "int8";
    case ElemKind::Int16:
        return "int16";
    case ElemKind::Int32:
        return "int32";
    case ElemKind::Int64:
        return "int64";
    case ElemKind::UInt8:
        return "uint8";
    case ElemKind::UInt16:
        return "uint16";
    case ElemKind::UInt32:
        return "uint32";
    case ElemKind::UInt64:
        return "uint64";
    case ElemKind::Float32:
        return "float32";
    case ElemKind::Float64:
        return "float64";
    }
    throw ValidationError("unknown element kind");
}

ElemKind ElemKindFromString(const std::string &name)
{
    if (name == "int8")
        return ElemKind::Int8;
    if (name == "int16")
        return ElemKind::Int16;
    if (name == "int32")
        return ElemKind::Int32;
    if (name == "int64")
        return ElemKind::Int64;
    if (name == "uint8")
        return ElemKind::UInt8;
    if (name == "uint16")
        return ElemKind::UInt16;
    if (name == "uint32")
        return ElemKind::UInt32;
    if (name == "uint64")
        return ElemKind::UInt64;
    if (name == "float32")
        return ElemKind::Float32;
    if (name == "float64")
        return ElemKind::Float64;
    throw ProtocolError("unknown element kind name \"" + name + "\"");
}

const DatasetDecl *StepAnnouncement::FindDataset(const std::string &name) const
{
    for (const auto &d : datasets)
    {
        if (d.name == name)
        {
            return &d;
        }
    }
    return nullptr;
}

std::uint64_t Volume(const Extent &extent)
{
    if (extent.empty())
    {
        return 0;
    }
    std::uint64_t v = 1;
    for (const std::uint64_t e : extent)
    {
        v *= e;
    }
    return v;
}

std::uint64_t Volume(const Region &region) { return Volume(region.extent); }

std::uint64_t ByteSize(const Region &region, ElemKind kind)
{
    return Volume(region) * ElemSize(kind);
}

std::optional<std::string> CheckDecl(const DatasetDecl &decl)
{
    if (decl.name.empty())
    {
        return "dataset name is empty";
    }
    // "/"-separated path with no empty components (no leading, trailing,
    // or doubled separators)
    std::size_t start = 0;
    while (true)
    {
        const std::size_t sep = decl.name.find('/', start);
        const std::size_t end = (sep == std::string::npos)
                                    ? decl.name.size()
                                    : sep;
        if (end == start)
        {
            return "dataset name \"" + decl.name +
                   "\" has an empty path component";
        }
        if (sep == std::string::npos)
        {
            break;
        }
        start = sep + 1;
        if (start == decl.name.size())
        {
            return "dataset name \"" + decl.name +
                   "\" has an empty path component";
        }
    }
    if (decl.global_extent.empty())
    {
        return "dataset \"" + decl.name + "\" has rank 0";
    }
    for (std::size_t axis = 0; axis < decl.global_extent.size(); ++axis)
    {
        if (decl.global_extent[axis] == 0)
        {
            return "dataset \"" + decl.name + "\" has zero extent on axis " +
                   std::to_string(axis);
        }
    }
    return std::nullopt;
}

std::optional<std::string> ValidateChunk(const WrittenChunk &c,
                                         const DatasetDecl &d)
{
    const std::size_t rank = d.global_extent.size();
    if (c.region.offset.size() != c.region.extent.size())
    {
        return "chunk in \"" + c.dataset + "\": offset rank " +
               std::to_string(c.region.offset.size()) +
               " != extent rank " + std::to_string(c.region.extent.size());
    }
    if (c.region.Rank() != rank)
    {
        return "chunk in \"" + c.dataset + "\": rank " +
               std::to_string(c.region.Rank()) +
               " does not match dataset rank " + std::to_string(rank);
    }
    for (std::size_t axis = 0; axis < rank; ++axis)
    {
        if (c.region.extent[axis] == 0)
        {
            return "chunk in \"" + c.dataset + "\": zero extent on axis " +
                   std::to_string(axis);
        }
        // overflow-safe form of offset + extent > global
        if (c.region.offset[axis] > d.global_extent[axis] ||
            c.region.extent[axis] >
                d.global_extent[axis] - c.region.offset[axis])
        {
            std::ostringstream msg;
            msg << "chunk in \"" << c.dataset << "\": axis " << axis
                << " exceeds global extent (" << c.region.offset[axis] << "+"
                << c.region.extent[axis] << " > " << d.global_extent[axis]
                << ")";
            return msg.str();
        }
    }
    return std::nullopt;
}

std::string LocalHostname()
{
    if (const char *env = std::getenv("CHUNKSTREAM_HOSTNAME"))
    {
        if (*env != '\0')
        {
            return env;
        }
    }
    char buf[256] = {};
    if (::gethostname(buf, sizeof(buf) - 1) != 0)
    {
        return "localhost";
    }
    return buf;
}

bool ChunkTableLess(const WrittenChunk &a, const WrittenChunk &b)
{
    if (a.producer_rank != b.producer_rank)
    {
        return a.producer_rank < b.producer_rank;
    }
    if (a.dataset != b.dataset)
    {
        return a.dataset < b.dataset;
    }
    if (a.region.offset != b.region.offset)
    {
        return a.region.offset < b.region.offset;
    }
    return a.region.extent < b.region.extent;
}

} // end namespace chunkstream
