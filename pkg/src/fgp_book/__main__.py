from fgp_book.cli import main

main()
