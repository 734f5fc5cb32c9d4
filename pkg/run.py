import sys

from dotenv import load_dotenv

# Loading environment variables before the app reads its configuration
load_dotenv()

from app.main import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
