"""resetedit CLI commands"""
