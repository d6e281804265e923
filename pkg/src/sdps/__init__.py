"""Content-based publish/subscribe overlay with a centralized controller and policy engine."""
