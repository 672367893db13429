from .app import BundleUnavailable, create_app

__all__ = ["BundleUnavailable", "create_app"]
