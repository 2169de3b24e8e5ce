"""
Core components for the TutorNet curriculum engine

This package holds the infrastructure the services build on:
- Dense tensors with reverse-mode gradients and NCHW functional ops
- Finite-difference gradient checking
- In-memory caching and performance monitoring
- Concurrent processing and atomic file output
"""
